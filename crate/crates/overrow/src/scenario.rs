//! Scenario files.
//!
//! A scenario is TOML. Every physical field carries its unit in the key
//! (`_m`, `_kg`, `_s`, `_deg`, `_psi`, `_gpm`, ...). Every section is
//! optional and falls back to the stock robot. Problems are collected across
//! the whole file and reported together.

use std::path::{Path, PathBuf};

use overrow_core::crsf::ChannelMap;
use overrow_core::drive::{BatteryModel, DriveConfig, PidGains};
use overrow_core::field::{FieldLayout, LayoutWarning, Plot, RowSet, TerrainPatch, WorldConfig, MAX_DT_MS};
use overrow_core::geometry::{Polygon, Vec2};
use overrow_core::kinematics::Pose;
use overrow_core::sprayer::{CoverageMode, SprayerConfig};
use overrow_core::terramech::{ChassisConfig, MotorSpec, TerrainParams};
use overrow_core::ParamError;
use serde::de::DeserializeOwned;
use serde::Deserialize;

pub const DEFAULT_DURATION_S: f64 = 10.0;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{} problem(s):\n  {}", .0.len(), .0.join("\n  "))]
    Invalid(Vec<String>),
}

/// A loaded, validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: Option<String>,
    pub world: WorldConfig,
    pub duration_ms: u64,
    /// Input trace, resolved against the scenario file's directory.
    pub trace: Option<PathBuf>,
    pub warnings: Vec<LayoutWarning>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: None,
            world: WorldConfig::default(),
            duration_ms: (DEFAULT_DURATION_S * 1000.0) as u64,
            trace: None,
            warnings: Vec::new(),
        }
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.into(), source })?;
    let mut sc = parse_scenario(&text)?;
    if let (Some(t), Some(dir)) = (&sc.trace, path.parent()) {
        sc.trace = Some(dir.join(t));
    }
    Ok(sc)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ChassisSection {
    mass_kg: f64,
    platform_mass_kg: f64,
    track_width_m: f64,
    wheelbase_m: f64,
    cg_height_m: f64,
    cg_to_front_m: f64,
    yaw_inertia_kgm2: f64,
    wheel_radius_m: f64,
    wheel_width_m: f64,
    n_driven: u32,
    clearance_m: f64,
    design_acceleration_mps2: f64,
}

impl Default for ChassisSection {
    fn default() -> Self {
        let c = ChassisConfig::default();
        Self {
            mass_kg: c.mass,
            platform_mass_kg: c.platform_mass,
            track_width_m: c.track_width,
            wheelbase_m: c.wheelbase,
            cg_height_m: c.cg_height,
            cg_to_front_m: c.cg_to_front,
            yaw_inertia_kgm2: c.yaw_inertia,
            wheel_radius_m: c.wheel_radius,
            wheel_width_m: c.wheel_width,
            n_driven: c.n_driven,
            clearance_m: c.clearance,
            design_acceleration_mps2: c.design_acceleration,
        }
    }
}

impl ChassisSection {
    fn build(&self) -> ChassisConfig {
        ChassisConfig {
            mass: self.mass_kg,
            platform_mass: self.platform_mass_kg,
            track_width: self.track_width_m,
            wheelbase: self.wheelbase_m,
            cg_height: self.cg_height_m,
            cg_to_front: self.cg_to_front_m,
            yaw_inertia: self.yaw_inertia_kgm2,
            wheel_radius: self.wheel_radius_m,
            wheel_width: self.wheel_width_m,
            n_driven: self.n_driven,
            clearance: self.clearance_m,
            design_acceleration: self.design_acceleration_mps2,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct MotorSection {
    continuous_torque_nm: f64,
    gear_ratio: f64,
    duty_limit_min: f64,
    capacity_fraction: f64,
    no_load_wheel_speed_mps: f64,
}

impl Default for MotorSection {
    fn default() -> Self {
        let m = MotorSpec::default();
        Self {
            continuous_torque_nm: m.continuous_torque,
            gear_ratio: m.gear_ratio,
            duty_limit_min: m.duty_limit_minutes,
            capacity_fraction: m.capacity_fraction,
            no_load_wheel_speed_mps: m.no_load_wheel_speed,
        }
    }
}

impl MotorSection {
    fn build(&self) -> MotorSpec {
        MotorSpec {
            continuous_torque: self.continuous_torque_nm,
            gear_ratio: self.gear_ratio,
            duty_limit_minutes: self.duty_limit_min,
            capacity_fraction: self.capacity_fraction,
            no_load_wheel_speed: self.no_load_wheel_speed_mps,
        }
    }
}

/// RC channel assignment, 1-based as printed on a transmitter.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ChannelsSection {
    steering: usize,
    throttle: usize,
    switches: [usize; 4],
}

impl Default for ChannelsSection {
    fn default() -> Self {
        Self { steering: 1, throttle: 2, switches: [5, 6, 7, 8] }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GainsSection {
    kp: f64,
    ki: f64,
    #[serde(default)]
    kd: f64,
    feedforward: f64,
    integral_limit: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DriveSection {
    time_constant_s: f64,
    counts_per_rev: f64,
    failsafe_ms: u64,
    deadzone: f64,
    switch_threshold: f64,
    battery_v: f64,
    battery_sag_v_per_duty: f64,
    channels: ChannelsSection,
    /// Raw gains in duty per count/s; derived from the plant when absent.
    gains: Option<GainsSection>,
}

impl Default for DriveSection {
    fn default() -> Self {
        let d = DriveConfig::new(MotorSpec::default(), ChassisConfig::default().wheel_radius);
        let b = BatteryModel::default();
        Self {
            time_constant_s: d.plant.time_constant,
            counts_per_rev: d.counts_per_rev,
            failsafe_ms: d.failsafe_ms,
            deadzone: d.channel_map.deadzone,
            switch_threshold: d.channel_map.switch_threshold,
            battery_v: b.nominal_voltage,
            battery_sag_v_per_duty: b.sag_per_duty,
            channels: ChannelsSection::default(),
            gains: None,
        }
    }
}

impl DriveSection {
    fn build(&self, motor: MotorSpec, wheel_radius: f64, errs: &mut Vec<String>) -> DriveConfig {
        let mut d = DriveConfig::new(motor, wheel_radius);
        let ch = &self.channels;
        let mut seen = Vec::new();
        for (key, idx) in [("steering", ch.steering), ("throttle", ch.throttle)]
            .into_iter()
            .chain(ch.switches.iter().map(|&s| ("switches", s)))
        {
            if !(1..=16).contains(&idx) {
                errs.push(format!("[drive.channels] {key} = {idx} is outside 1..=16"));
            } else if seen.contains(&idx) {
                errs.push(format!("[drive.channels] channel {idx} is assigned twice"));
            }
            seen.push(idx);
        }
        let zero_based = |i: usize| i.clamp(1, 16) - 1;
        d.channel_map = ChannelMap {
            steering: zero_based(ch.steering),
            throttle: zero_based(ch.throttle),
            switches: ch.switches.map(zero_based),
            deadzone: self.deadzone,
            switch_threshold: self.switch_threshold,
        };
        if !(0.0..1.0).contains(&self.deadzone) {
            errs.push(format!("[drive] deadzone = {} is outside [0, 1)", self.deadzone));
        }
        if !(0.0..1.0).contains(&self.switch_threshold) {
            errs.push(format!("[drive] switch_threshold = {} is outside [0, 1)", self.switch_threshold));
        }
        if !(self.time_constant_s > 0.0 && self.time_constant_s.is_finite()) {
            errs.push(format!("[drive] time_constant_s must be positive, got {}", self.time_constant_s));
        }
        if !(self.counts_per_rev > 0.0 && self.counts_per_rev.is_finite()) {
            errs.push(format!("[drive] counts_per_rev must be positive, got {}", self.counts_per_rev));
        }
        if self.failsafe_ms == 0 {
            errs.push("[drive] failsafe_ms must be positive".into());
        }
        if !(self.battery_v > 0.0 && self.battery_sag_v_per_duty >= 0.0) {
            errs.push(format!(
                "[drive] battery_v must be positive and battery_sag_v_per_duty non-negative, got {} and {}",
                self.battery_v, self.battery_sag_v_per_duty
            ));
        }
        d.counts_per_rev = self.counts_per_rev;
        d.failsafe_ms = self.failsafe_ms;
        d.plant.time_constant = self.time_constant_s;
        d.plant.no_load_speed = d.to_counts(motor.no_load_wheel_speed);
        d.battery = BatteryModel { nominal_voltage: self.battery_v, sag_per_duty: self.battery_sag_v_per_duty };
        d.gains = match &self.gains {
            Some(g) => PidGains {
                kp: g.kp,
                ki: g.ki,
                kd: g.kd,
                feedforward: g.feedforward,
                integral_limit: g.integral_limit,
            },
            None => PidGains::derived(&d.plant),
        };
        d
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SprayerSection {
    tank_capacity_l: f64,
    operating_pressure_psi: f64,
    ref_pressure_psi: f64,
    nozzles: u32,
    nozzle_ref_flow_gpm: f64,
    plot_area_m2: f64,
    plot_spray_time_s: f64,
    coverage_mode: CoverageMode,
    boom_width_m: f64,
    boom_depth_m: f64,
    boom_offset_m: f64,
}

impl Default for SprayerSection {
    fn default() -> Self {
        let s = SprayerConfig::default();
        Self {
            tank_capacity_l: s.tank_capacity,
            operating_pressure_psi: s.operating_pressure,
            ref_pressure_psi: s.ref_pressure,
            nozzles: s.nozzles,
            nozzle_ref_flow_gpm: s.nozzle_ref_flow,
            plot_area_m2: s.plot_area,
            plot_spray_time_s: s.plot_spray_time,
            coverage_mode: s.coverage_mode,
            boom_width_m: s.boom_width,
            boom_depth_m: s.boom_depth,
            boom_offset_m: s.boom_offset,
        }
    }
}

impl SprayerSection {
    fn build(&self) -> SprayerConfig {
        SprayerConfig {
            tank_capacity: self.tank_capacity_l,
            operating_pressure: self.operating_pressure_psi,
            ref_pressure: self.ref_pressure_psi,
            nozzles: self.nozzles,
            nozzle_ref_flow: self.nozzle_ref_flow_gpm,
            plot_area: self.plot_area_m2,
            plot_spray_time: self.plot_spray_time_s,
            coverage_mode: self.coverage_mode,
            boom_width: self.boom_width_m,
            boom_depth: self.boom_depth_m,
            boom_offset: self.boom_offset_m,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CastersSection {
    locked: bool,
    heading_noise_radps: f64,
}

impl Default for CastersSection {
    fn default() -> Self {
        Self { locked: true, heading_noise_radps: 0.0 }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct StartSection {
    x_m: f64,
    y_m: f64,
    heading_deg: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TerrainSection {
    name: String,
    c_rr: f64,
    incline_deg: f64,
    slip_factor: f64,
}

impl Default for TerrainSection {
    fn default() -> Self {
        let t = WorldConfig::default().background;
        Self { name: t.name, c_rr: t.c_rr, incline_deg: t.incline.to_degrees(), slip_factor: t.slip_factor }
    }
}

impl TerrainSection {
    fn build(&self) -> TerrainParams {
        TerrainParams::new(self.name.clone(), self.c_rr, self.incline_deg.to_radians()).with_slip(self.slip_factor)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RowsSection {
    #[serde(default)]
    origin_m: [f64; 2],
    #[serde(default)]
    heading_deg: f64,
    length_m: f64,
    row_spacing_m: f64,
    n_rows: u32,
    #[serde(default = "one")]
    n_rows_per_plot_group: u32,
}

fn one() -> u32 {
    1
}

/// A polygon given either as vertices or as an axis-aligned `[x, y, width, height]`.
fn shape(polygon_m: &Option<Vec<[f64; 2]>>, rect_m: &Option<[f64; 4]>, at: &str, errs: &mut Vec<String>) -> Polygon {
    match (polygon_m, rect_m) {
        (Some(v), None) => Polygon::new(v.iter().map(|&[x, y]| Vec2::new(x, y)).collect()),
        (None, Some([x, y, w, h])) => Polygon::rect(*x, *y, *w, *h),
        _ => {
            errs.push(format!("{at}: give exactly one of polygon_m or rect_m"));
            Polygon::rect(0.0, 0.0, 1.0, 1.0)
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlotSection {
    #[serde(default)]
    crop: String,
    #[serde(default)]
    crop_height_m: f64,
    polygon_m: Option<Vec<[f64; 2]>>,
    rect_m: Option<[f64; 4]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatchSection {
    polygon_m: Option<Vec<[f64; 2]>>,
    rect_m: Option<[f64; 4]>,
    name: String,
    c_rr: f64,
    #[serde(default)]
    incline_deg: f64,
    #[serde(default = "unit")]
    slip_factor: f64,
}

fn unit() -> f64 {
    1.0
}

const TOP_LEVEL_KEYS: [&str; 15] = [
    "name",
    "seed",
    "dt_s",
    "duration_s",
    "trace",
    "chassis",
    "motor",
    "drive",
    "sprayer",
    "casters",
    "start",
    "background",
    "rows",
    "plots",
    "terrain_patches",
];

fn section<T: DeserializeOwned + Default>(table: &toml::Table, key: &str, errs: &mut Vec<String>) -> T {
    match table.get(key) {
        None => T::default(),
        Some(v) => v.clone().try_into().unwrap_or_else(|e| {
            errs.push(format!("[{key}] {}", one_line(&e)));
            T::default()
        }),
    }
}

fn array<T: DeserializeOwned>(table: &toml::Table, key: &str, errs: &mut Vec<String>) -> Vec<T> {
    let Some(v) = table.get(key) else {
        return Vec::new();
    };
    let Some(items) = v.as_array() else {
        errs.push(format!("{key}: expected an array of tables ([[{key}]])"));
        return Vec::new();
    };
    items
        .iter()
        .enumerate()
        .filter_map(|(i, item)| match item.clone().try_into() {
            Ok(t) => Some(t),
            Err(e) => {
                errs.push(format!("[[{key}]] #{i}: {}", one_line(&e)));
                None
            }
        })
        .collect()
}

fn one_line(e: &impl std::fmt::Display) -> String {
    e.to_string().split_whitespace().collect::<Vec<_>>().join(" ")
}

fn scalar<T: DeserializeOwned>(table: &toml::Table, key: &str, default: T, errs: &mut Vec<String>) -> T {
    match table.get(key) {
        None => default,
        Some(v) => v.clone().try_into().unwrap_or_else(|e| {
            errs.push(format!("{key}: {}", one_line(&e)));
            default
        }),
    }
}

/// Converts seconds to whole milliseconds, rejecting anything finer.
fn whole_ms(key: &str, seconds: f64, errs: &mut Vec<String>) -> u64 {
    let ms = (seconds * 1000.0).round();
    if !seconds.is_finite() || seconds < 0.0 || (ms - seconds * 1000.0).abs() > 1e-6 {
        errs.push(format!("{key} = {seconds} must be a non-negative whole number of milliseconds"));
        return 0;
    }
    ms as u64
}

fn push_params(errs: &mut Vec<String>, section: &str, params: impl IntoIterator<Item = ParamError>) {
    errs.extend(params.into_iter().map(|e| format!("[{section}] {e}")));
}

/// Parses and validates scenario text. The trace path is returned as written.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let table: toml::Table = text.parse().map_err(|e| ScenarioError::Invalid(vec![one_line(&e)]))?;
    let mut errs = Vec::new();
    for key in table.keys() {
        if !TOP_LEVEL_KEYS.contains(&key.as_str()) {
            errs.push(format!("unknown key `{key}`"));
        }
    }

    let name: Option<String> = scalar(&table, "name", None, &mut errs);
    let seed: u64 = scalar(&table, "seed", 0, &mut errs);
    let dt_s: f64 = scalar(&table, "dt_s", 0.02, &mut errs);
    let duration_s: f64 = scalar(&table, "duration_s", DEFAULT_DURATION_S, &mut errs);
    let trace: Option<PathBuf> = scalar(&table, "trace", None, &mut errs);

    let chassis_s: ChassisSection = section(&table, "chassis", &mut errs);
    let motor_s: MotorSection = section(&table, "motor", &mut errs);
    let drive_s: DriveSection = section(&table, "drive", &mut errs);
    let sprayer_s: SprayerSection = section(&table, "sprayer", &mut errs);
    let casters: CastersSection = section(&table, "casters", &mut errs);
    let start: StartSection = section(&table, "start", &mut errs);
    let background_s: TerrainSection = section(&table, "background", &mut errs);
    let rows: Vec<RowsSection> = array(&table, "rows", &mut errs);
    let plots: Vec<PlotSection> = array(&table, "plots", &mut errs);
    let patches: Vec<PatchSection> = array(&table, "terrain_patches", &mut errs);

    let dt_ms = whole_ms("dt_s", dt_s, &mut errs);
    if dt_ms == 0 || dt_ms > MAX_DT_MS {
        errs.push(format!("dt_s = {dt_s} is outside (0, {}]", MAX_DT_MS as f64 / 1000.0));
    }
    let duration_ms = whole_ms("duration_s", duration_s, &mut errs);

    let chassis = chassis_s.build();
    push_params(&mut errs, "chassis", chassis.validate());
    let motor = motor_s.build();
    push_params(&mut errs, "motor", motor.validate());
    let drive = drive_s.build(motor, chassis.wheel_radius, &mut errs);
    push_params(&mut errs, "drive.gains", drive.gains.validate().err());
    let sprayer = sprayer_s.build();
    push_params(&mut errs, "sprayer", sprayer.validate());
    let background = background_s.build();
    push_params(&mut errs, "background", background.validate().err());
    if !(casters.heading_noise_radps.is_finite() && casters.heading_noise_radps >= 0.0) {
        errs.push(format!("[casters] heading_noise_radps must be non-negative, got {}", casters.heading_noise_radps));
    }
    let start = Pose::new(start.x_m, start.y_m, start.heading_deg.to_radians());
    if !start.is_finite() {
        errs.push("[start] position and heading must be finite".into());
    }

    let layout = FieldLayout {
        rows: rows
            .iter()
            .map(|r| RowSet {
                origin: Vec2::new(r.origin_m[0], r.origin_m[1]),
                heading: r.heading_deg.to_radians(),
                length: r.length_m,
                row_spacing: r.row_spacing_m,
                n_rows: r.n_rows,
                n_rows_per_plot_group: r.n_rows_per_plot_group,
            })
            .collect(),
        plots: plots
            .iter()
            .enumerate()
            .map(|(i, p)| Plot {
                polygon: shape(&p.polygon_m, &p.rect_m, &format!("[[plots]] #{i}"), &mut errs),
                crop: p.crop.clone(),
                crop_height: p.crop_height_m,
            })
            .collect(),
        terrain_patches: patches
            .iter()
            .enumerate()
            .map(|(i, p)| TerrainPatch {
                polygon: shape(&p.polygon_m, &p.rect_m, &format!("[[terrain_patches]] #{i}"), &mut errs),
                terrain: TerrainParams::new(p.name.clone(), p.c_rr, p.incline_deg.to_radians()).with_slip(p.slip_factor),
            })
            .collect(),
    };
    let (layout_errs, warnings) = layout.validate(&chassis);
    errs.extend(layout_errs.iter().map(|e| format!("layout: {e}")));

    if !errs.is_empty() {
        return Err(ScenarioError::Invalid(errs));
    }
    let world = WorldConfig {
        chassis,
        drive,
        sprayer,
        layout,
        background,
        start,
        dt_ms,
        seed,
        caster_locked: casters.locked,
        heading_noise: casters.heading_noise_radps,
    };
    Ok(Scenario { name, world, duration_ms, trace, warnings })
}
