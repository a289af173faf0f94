//! Motor sizing reports and the terrain library file.
//!
//! Library file layout:
//!
//! ```toml
//! [[terrain]]
//! name = "Gravel"
//! c_rr_min = 0.02
//! c_rr_max = 0.02
//! incline_deg = 10.0
//! ```

use std::fmt::Write as _;

use overrow_core::terramech::{
    find_terrain, fit_radius_and_acceleration, max_payload, terrain_feasibility, torque_table_samples, ChassisConfig,
    MotorSpec, RangePick, TerrainParams, TerrainRecord, AVERAGE_TERRAIN, TORQUE_TABLE,
};
use overrow_core::ParamError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LibraryFile {
    terrain: Vec<LibraryEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LibraryEntry {
    name: String,
    c_rr_min: f64,
    c_rr_max: f64,
    incline_deg: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum SizeError {
    #[error("terrain library has {} problem(s):\n  {}", .0.len(), .0.join("\n  "))]
    Library(Vec<String>),
    #[error("unknown terrain `{0}`")]
    UnknownTerrain(String),
    #[error(transparent)]
    Param(#[from] ParamError),
}

pub fn parse_library(text: &str) -> Result<Vec<TerrainRecord>, SizeError> {
    let file: LibraryFile = toml::from_str(text).map_err(|e| SizeError::Library(vec![e.to_string()]))?;
    let mut errs = Vec::new();
    let records: Vec<TerrainRecord> = file
        .terrain
        .iter()
        .map(|e| TerrainRecord::new(&e.name, e.c_rr_min, e.c_rr_max, e.incline_deg.to_radians()))
        .collect();
    for (i, r) in records.iter().enumerate() {
        if let Err(e) = r.validate() {
            errs.push(format!("terrain #{i} ({}): {e}", r.name));
        }
        if records[..i].iter().any(|o| o.name.eq_ignore_ascii_case(&r.name)) {
            errs.push(format!("terrain #{i}: duplicate name `{}`", r.name));
        }
    }
    if errs.is_empty() {
        Ok(records)
    } else {
        Err(SizeError::Library(errs))
    }
}

pub fn library_to_toml(records: &[TerrainRecord]) -> String {
    let file = LibraryFile {
        terrain: records
            .iter()
            .map(|r| LibraryEntry {
                name: r.name.clone(),
                c_rr_min: r.c_rr_min,
                c_rr_max: r.c_rr_max,
                incline_deg: r.default_incline.to_degrees(),
            })
            .collect(),
    };
    toml::to_string(&file).expect("library serializes")
}

/// Evaluation knobs shared by every row of a report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeOptions {
    pub pick: RangePick,
    /// Ground speed the payload estimate must still hold, m/s.
    pub target_speed: f64,
    pub safety_factor: f64,
}

impl Default for SizeOptions {
    fn default() -> Self {
        Self { pick: RangePick::Mid, target_speed: 0.61, safety_factor: 1.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainRow {
    pub surface: String,
    pub c_rr: f64,
    pub incline_deg: f64,
    pub tractive_force_n: f64,
    /// Total over the driven wheels.
    pub required_torque_nm: f64,
    pub motor_torque_nm: f64,
    pub available_torque_nm: f64,
    pub required_rpm: f64,
    pub feasible: bool,
    pub margin: f64,
    /// Mass the bare platform can carry at the target speed and safety factor.
    pub payload_kg: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_torque_nm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deviation: Option<f64>,
}

pub fn size_terrain(
    chassis: &ChassisConfig,
    motor: &MotorSpec,
    terrain: &TerrainParams,
    opts: &SizeOptions,
) -> Result<TerrainRow, ParamError> {
    let r = terrain_feasibility(chassis, motor, terrain, chassis.design_acceleration)?;
    let platform = chassis.clone().with_mass(chassis.platform_mass);
    let payload = max_payload(&platform, motor, terrain, opts.target_speed, opts.safety_factor)?;
    Ok(TerrainRow {
        surface: terrain.name.clone(),
        c_rr: terrain.c_rr,
        incline_deg: terrain.incline.to_degrees(),
        tractive_force_n: r.tractive_force,
        required_torque_nm: r.wheel_torque,
        motor_torque_nm: r.motor_torque,
        available_torque_nm: r.available_torque,
        required_rpm: r.required_rpm,
        feasible: r.feasible,
        margin: r.margin,
        payload_kg: payload.added_mass,
        reference_torque_nm: None,
        deviation: None,
    })
}

pub fn size_named(
    chassis: &ChassisConfig,
    motor: &MotorSpec,
    library: &[TerrainRecord],
    name: &str,
    opts: &SizeOptions,
) -> Result<TerrainRow, SizeError> {
    let rec = find_terrain(library, name).ok_or_else(|| SizeError::UnknownTerrain(name.into()))?;
    Ok(size_terrain(chassis, motor, &rec.params(opts.pick), opts)?)
}

/// The six reference surfaces with their published torques alongside.
pub fn size_reference_table(
    chassis: &ChassisConfig,
    motor: &MotorSpec,
    library: &[TerrainRecord],
    opts: &SizeOptions,
) -> Result<Vec<TerrainRow>, SizeError> {
    let samples = torque_table_samples(library).ok_or_else(|| {
        let missing = TORQUE_TABLE.iter().find(|f| find_terrain(library, f.library_name).is_none());
        SizeError::UnknownTerrain(missing.map_or("?", |f| f.library_name).into())
    })?;
    samples
        .iter()
        .map(|(terrain, reference)| {
            let mut row = size_terrain(chassis, motor, terrain, opts)?;
            row.reference_torque_nm = Some(*reference);
            row.deviation = Some(row.required_torque_nm / reference - 1.0);
            Ok(row)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayloadPoint {
    pub safety_factor: f64,
    pub payload_kg: f64,
}

/// Payload of the bare platform on the average field soil across safety factors.
pub fn payload_sweep(
    chassis: &ChassisConfig,
    motor: &MotorSpec,
    library: &[TerrainRecord],
    target_speed: f64,
    factors: &[f64],
) -> Result<Vec<PayloadPoint>, SizeError> {
    let rec = find_terrain(library, AVERAGE_TERRAIN).ok_or_else(|| SizeError::UnknownTerrain(AVERAGE_TERRAIN.into()))?;
    let terrain = rec.params(RangePick::Mid);
    let platform = chassis.clone().with_mass(chassis.platform_mass);
    factors
        .iter()
        .map(|&sf| {
            let p = max_payload(&platform, motor, &terrain, target_speed, sf)?;
            Ok(PayloadPoint { safety_factor: sf, payload_kg: p.added_mass })
        })
        .collect()
}

/// Wheel radius and design acceleration fitted to the reference torques.
pub fn fit_calibration(chassis: &ChassisConfig, library: &[TerrainRecord]) -> Result<(f64, f64), SizeError> {
    let samples = torque_table_samples(library).ok_or_else(|| SizeError::UnknownTerrain(AVERAGE_TERRAIN.into()))?;
    Ok(fit_radius_and_acceleration(chassis.mass, &samples)?)
}

pub fn render_rows(rows: &[TerrainRow]) -> String {
    let mut out = String::new();
    let with_ref = rows.iter().any(|r| r.reference_torque_nm.is_some());
    let _ = write!(
        out,
        "{:<20} {:>6} {:>6} {:>10} {:>10} {:>8} {:>8} {:>9}",
        "surface", "c_rr", "grade", "req N·m", "avail N·m", "rpm", "ok", "payload"
    );
    if with_ref {
        let _ = write!(out, " {:>9} {:>7}", "ref N·m", "dev");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{:<20} {:>6.3} {:>5.1}° {:>10.2} {:>10.2} {:>8.1} {:>8} {:>6.1} kg",
            r.surface,
            r.c_rr,
            r.incline_deg,
            r.required_torque_nm,
            r.available_torque_nm,
            r.required_rpm,
            if r.feasible { "yes" } else { "NO" },
            r.payload_kg
        );
        if let (Some(reference), Some(dev)) = (r.reference_torque_nm, r.deviation) {
            let _ = write!(out, " {:>9.2} {:>+6.1}%", reference, dev * 100.0);
        }
        out.push('\n');
    }
    out
}
