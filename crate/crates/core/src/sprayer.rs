//! Herbicide sprayer: constant-pressure supply, solenoid-gated boom
//! sections, tank consumption and coverage accounting.

use serde::{Deserialize, Serialize};

use crate::error::{positive, ParamError};
use crate::math::{floor, sqrt};
use crate::LITERS_PER_GALLON;

pub const SECTIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageMode {
    /// A plot counts once its spray timer has run for `plot_spray_time`.
    #[default]
    Time,
    /// A plot counts as soon as an open boom overlaps it.
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SprayerConfig {
    /// L
    pub tank_capacity: f64,
    /// PSI, held by the regulator.
    pub operating_pressure: f64,
    /// PSI at which `nozzle_ref_flow` is rated.
    pub ref_pressure: f64,
    pub nozzles: u32,
    /// GPM per nozzle at `ref_pressure`.
    pub nozzle_ref_flow: f64,
    /// m²
    pub plot_area: f64,
    /// s
    pub plot_spray_time: f64,
    pub coverage_mode: CoverageMode,
    /// Boom footprint across the direction of travel, m.
    pub boom_width: f64,
    /// Boom footprint along the direction of travel, m.
    pub boom_depth: f64,
    /// Boom center ahead of the driven axle, m (negative is behind).
    pub boom_offset: f64,
}

impl Default for SprayerConfig {
    fn default() -> Self {
        Self {
            tank_capacity: 94.64,
            operating_pressure: 40.0,
            ref_pressure: 40.0,
            nozzles: 4,
            nozzle_ref_flow: 0.2,
            plot_area: 2.23,
            plot_spray_time: 4.0,
            coverage_mode: CoverageMode::Time,
            boom_width: 1.37,
            boom_depth: 0.3,
            boom_offset: 0.0,
        }
    }
}

impl SprayerConfig {
    pub fn validate(&self) -> alloc::vec::Vec<ParamError> {
        let checks = [
            ("tank_capacity", self.tank_capacity),
            ("operating_pressure", self.operating_pressure),
            ("ref_pressure", self.ref_pressure),
            ("nozzles", self.nozzles as f64),
            ("nozzle_ref_flow", self.nozzle_ref_flow),
            ("plot_area", self.plot_area),
            ("plot_spray_time", self.plot_spray_time),
            ("boom_width", self.boom_width),
            ("boom_depth", self.boom_depth),
        ];
        let mut errs: alloc::vec::Vec<ParamError> =
            checks.iter().filter_map(|&(name, v)| positive(name, v).err()).collect();
        if !self.boom_offset.is_finite() {
            errs.push(ParamError::NotFinite { name: "boom_offset" });
        }
        errs
    }

    pub fn nozzles_per_section(&self) -> f64 {
        self.nozzles as f64 / SECTIONS as f64
    }

    /// All sections open at operating pressure, GPM.
    pub fn full_flow_gpm(&self) -> f64 {
        self.nozzles as f64 * nozzle_flow(self.operating_pressure, self)
    }

    pub fn full_flow_lps(&self) -> f64 {
        self.full_flow_gpm() * LITERS_PER_GALLON / 60.0
    }
}

/// Orifice law: flow scales with the square root of pressure. GPM per nozzle.
pub fn nozzle_flow(pressure: f64, cfg: &SprayerConfig) -> f64 {
    if pressure <= 0.0 {
        return 0.0;
    }
    cfg.nozzle_ref_flow * sqrt(pressure / cfg.ref_pressure)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SprayerState {
    /// L
    pub tank_level: f64,
    /// Level at the start of the run, L.
    pub initial_level: f64,
    pub solenoid_open: [bool; SECTIONS],
    /// L
    pub cumulative_volume: f64,
    /// Time with at least one section open, s.
    pub cumulative_open_time: f64,
    /// m²
    pub area_covered: f64,
    /// Set while a section is open on an empty tank.
    pub dry_run: bool,
}

impl SprayerState {
    pub fn full(cfg: &SprayerConfig) -> Self {
        Self::with_level(cfg.tank_capacity)
    }

    pub fn with_level(level: f64) -> Self {
        Self {
            tank_level: level,
            initial_level: level,
            solenoid_open: [false; SECTIONS],
            cumulative_volume: 0.0,
            cumulative_open_time: 0.0,
            area_covered: 0.0,
            dry_run: false,
        }
    }

    pub fn open_sections(&self) -> usize {
        self.solenoid_open.iter().filter(|&&o| o).count()
    }

    /// Current demand with the present solenoid states, L/s.
    pub fn demand_lps(&self, cfg: &SprayerConfig) -> f64 {
        self.open_sections() as f64 * cfg.nozzles_per_section() * nozzle_flow(cfg.operating_pressure, cfg) * LITERS_PER_GALLON
            / 60.0
    }
}

/// Whole plots completed by `open_time` seconds of spraying at one plot per
/// `plot_spray_time`. The small bias absorbs accumulated step rounding.
pub fn plots_from_open_time(open_time: f64, cfg: &SprayerConfig) -> u64 {
    floor(open_time / cfg.plot_spray_time + 1e-9) as u64
}

/// Advances the sprayer by `dt` with the given solenoid states.
///
/// The tank level is always `initial_level - cumulative_volume`, so
/// dispensed plus remaining equals the initial fill exactly.
pub fn step_sprayer(state: SprayerState, cfg: &SprayerConfig, dt: f64, solenoids: [bool; SECTIONS]) -> SprayerState {
    let mut next = SprayerState { solenoid_open: solenoids, ..state };
    if next.open_sections() == 0 {
        next.dry_run = false;
        return next;
    }
    let remaining = state.initial_level - state.cumulative_volume;
    let wanted = next.demand_lps(cfg) * dt;
    let dispensed = wanted.min(remaining).max(0.0);
    next.cumulative_volume = state.cumulative_volume + dispensed;
    next.tank_level = next.initial_level - next.cumulative_volume;
    next.cumulative_open_time = state.cumulative_open_time + dt;
    next.dry_run = dispensed < wanted;
    next.area_covered = plots_from_open_time(next.cumulative_open_time, cfg) as f64 * cfg.plot_area;
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// m²
    pub area: f64,
    /// L
    pub volume: f64,
    pub volume_gallons: f64,
    /// s of full-boom spraying left in the tank.
    pub endurance_remaining: f64,
    pub plots_sprayed: u64,
    pub open_time: f64,
}

/// Coverage summary. `plots_sprayed` overrides the open-time plot count when
/// the caller tracked plots against field geometry.
pub fn coverage_report(state: &SprayerState, cfg: &SprayerConfig, plots_sprayed: Option<u64>) -> CoverageReport {
    let plots = plots_sprayed.unwrap_or_else(|| plots_from_open_time(state.cumulative_open_time, cfg));
    CoverageReport {
        area: plots as f64 * cfg.plot_area,
        volume: state.cumulative_volume,
        volume_gallons: state.cumulative_volume / LITERS_PER_GALLON,
        endurance_remaining: state.tank_level / cfg.full_flow_lps(),
        plots_sprayed: plots,
        open_time: state.cumulative_open_time,
    }
}

/// Time for a full tank to empty with every section open, s.
pub fn full_tank_endurance(cfg: &SprayerConfig) -> f64 {
    cfg.tank_capacity / cfg.full_flow_lps()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SprayRecord {
    /// ms
    pub t: u64,
    pub solenoid_mask: u8,
    /// L/s actually dispensed over the step.
    pub flow: f64,
    /// L
    pub tank_level: f64,
}
