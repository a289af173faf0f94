//! Terramechanics and drivetrain sizing.
//!
//! Tractive force is the sum of inertial, grade and rolling-resistance terms.
//! Torque at the wheel is force times wheel radius, split evenly across the
//! driven wheels. The caster model follows the front-drive/rear-caster layout:
//! casters sit one wheelbase behind the driven axle at ±half-track.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{in_range, non_negative, positive, ParamError};
use crate::math::{cos, sin};
use crate::GRAVITY;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainParams {
    pub name: String,
    /// Rolling-resistance coefficient.
    pub c_rr: f64,
    /// Grade, radians.
    pub incline: f64,
    /// Ground speed per unit wheel speed; 1 means no slip.
    pub slip_factor: f64,
}

impl TerrainParams {
    pub fn new(name: impl Into<String>, c_rr: f64, incline: f64) -> Self {
        Self { name: name.into(), c_rr, incline, slip_factor: 1.0 }
    }

    pub fn with_slip(mut self, slip_factor: f64) -> Self {
        self.slip_factor = slip_factor;
        self
    }

    pub fn flat(name: impl Into<String>, c_rr: f64) -> Self {
        Self::new(name, c_rr, 0.0)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        non_negative("c_rr", self.c_rr)?;
        in_range("slip_factor", self.slip_factor, 0.0, 1.0)?;
        if self.incline.is_nan() || self.incline.abs() >= PI / 2.0 {
            return Err(ParamError::OutOfRange {
                name: "incline",
                value: self.incline,
                min: -PI / 2.0,
                max: PI / 2.0,
            });
        }
        Ok(())
    }
}

/// Which point of a coefficient range to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangePick {
    Min,
    #[default]
    Mid,
    Max,
}

/// One entry of a terrain library: a surface with a rolling-resistance range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainRecord {
    pub name: String,
    pub c_rr_min: f64,
    pub c_rr_max: f64,
    /// Radians.
    pub default_incline: f64,
}

impl TerrainRecord {
    pub fn new(name: &str, c_rr_min: f64, c_rr_max: f64, default_incline: f64) -> Self {
        Self { name: name.into(), c_rr_min, c_rr_max, default_incline }
    }

    pub fn c_rr(&self, pick: RangePick) -> f64 {
        match pick {
            RangePick::Min => self.c_rr_min,
            RangePick::Mid => (self.c_rr_min + self.c_rr_max) / 2.0,
            RangePick::Max => self.c_rr_max,
        }
    }

    pub fn params(&self, pick: RangePick) -> TerrainParams {
        TerrainParams::new(self.name.clone(), self.c_rr(pick), self.default_incline)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        non_negative("c_rr_min", self.c_rr_min)?;
        non_negative("c_rr_max", self.c_rr_max)?;
        if self.c_rr_max < self.c_rr_min {
            return Err(ParamError::OutOfRange {
                name: "c_rr_max",
                value: self.c_rr_max,
                min: self.c_rr_min,
                max: f64::INFINITY,
            });
        }
        Ok(())
    }
}

/// Worst-case grade used for sizing, 10°.
pub const DESIGN_INCLINE: f64 = 10.0 * PI / 180.0;

/// Surface rolling-resistance table shipped as the default terrain library.
pub fn default_terrain_library() -> Vec<TerrainRecord> {
    let i = DESIGN_INCLINE;
    alloc::vec![
        TerrainRecord::new("Concrete", 0.002, 0.002, i),
        TerrainRecord::new("Asphalt", 0.004, 0.004, i),
        TerrainRecord::new("Rough Paved Road", 0.008, 0.008, i),
        TerrainRecord::new("Gravel", 0.02, 0.02, i),
        TerrainRecord::new("Soil (Medium-Hard)", 0.04, 0.08, i),
        TerrainRecord::new("Sand", 0.2, 0.4, i),
    ]
}

/// A row of the published required-torque table and the library entry it is evaluated with.
#[derive(Debug, Clone, Copy)]
pub struct TorqueFixture {
    pub surface: &'static str,
    pub library_name: &'static str,
    pub pick: RangePick,
    /// Total wheel torque, N·m.
    pub torque: f64,
}

/// Required total torque per surface. Grass and the two field soils are not
/// separate library entries; they map onto the medium-hard soil range.
pub const TORQUE_TABLE: [TorqueFixture; 6] = [
    TorqueFixture { surface: "Concrete", library_name: "Concrete", pick: RangePick::Mid, torque: 12.16 },
    TorqueFixture { surface: "Rough Paved Road", library_name: "Rough Paved Road", pick: RangePick::Mid, torque: 12.42 },
    TorqueFixture { surface: "Gravel", library_name: "Gravel", pick: RangePick::Mid, torque: 12.95 },
    TorqueFixture { surface: "Grass", library_name: "Soil (Medium-Hard)", pick: RangePick::Mid, torque: 14.21 },
    TorqueFixture { surface: "Dry Hard Soil", library_name: "Soil (Medium-Hard)", pick: RangePick::Min, torque: 13.81 },
    TorqueFixture { surface: "Wet Saturated Soil", library_name: "Soil (Medium-Hard)", pick: RangePick::Max, torque: 15.55 },
];

/// Library entry standing for average field soil.
pub const AVERAGE_TERRAIN: &str = "Soil (Medium-Hard)";

pub fn find_terrain<'a>(library: &'a [TerrainRecord], name: &str) -> Option<&'a TerrainRecord> {
    library.iter().find(|r| r.name.eq_ignore_ascii_case(name))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChassisConfig {
    /// Total mass including payload, kg.
    pub mass: f64,
    /// Bare platform mass without the spraying system, kg.
    pub platform_mass: f64,
    /// Distance between driven wheel centers, m.
    pub track_width: f64,
    /// Driven axle to caster axle, m.
    pub wheelbase: f64,
    pub cg_height: f64,
    /// Lever arm of the static caster load share, m.
    pub cg_to_front: f64,
    /// Yaw inertia, kg·m².
    pub yaw_inertia: f64,
    pub wheel_radius: f64,
    pub wheel_width: f64,
    pub n_driven: u32,
    /// Ground clearance under the belly, m.
    pub clearance: f64,
    /// Acceleration assumed when sizing, m/s².
    pub design_acceleration: f64,
}

/// Track width adjustment range of the stock frame, m.
pub const STOCK_TRACK_RANGE: (f64, f64) = (1.42, 1.57);

/// Wheel radius fitted against [`TORQUE_TABLE`], m.
pub const CALIBRATED_WHEEL_RADIUS: f64 = 0.0935;
/// Design acceleration fitted jointly with [`CALIBRATED_WHEEL_RADIUS`], m/s².
pub const CALIBRATED_DESIGN_ACCELERATION: f64 = 1.17;

impl Default for ChassisConfig {
    fn default() -> Self {
        Self {
            mass: 45.0,
            platform_mass: 20.0,
            track_width: 1.42,
            wheelbase: 1.2,
            cg_height: 0.6,
            cg_to_front: 0.45,
            yaw_inertia: 12.0,
            wheel_radius: CALIBRATED_WHEEL_RADIUS,
            wheel_width: 0.36,
            n_driven: 2,
            clearance: 0.94,
            design_acceleration: CALIBRATED_DESIGN_ACCELERATION,
        }
    }
}

impl ChassisConfig {
    /// Half of the track width (`b`).
    pub fn half_track(&self) -> f64 {
        self.track_width / 2.0
    }

    /// Caster contact points in the body frame (forward, left), left caster first.
    pub fn caster_positions(&self) -> [(f64, f64); 2] {
        let b = self.half_track();
        [(-self.wheelbase, b), (-self.wheelbase, -b)]
    }

    pub fn with_mass(mut self, mass: f64) -> Self {
        self.mass = mass;
        self
    }

    pub fn with_track_width(mut self, track_width: f64) -> Self {
        self.track_width = track_width;
        self
    }

    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Vec<ParamError> {
        let checks = [
            positive("mass", self.mass),
            positive("platform_mass", self.platform_mass),
            positive("track_width", self.track_width),
            positive("wheelbase", self.wheelbase),
            positive("cg_height", self.cg_height),
            positive("cg_to_front", self.cg_to_front),
            positive("yaw_inertia", self.yaw_inertia),
            positive("wheel_radius", self.wheel_radius),
            positive("wheel_width", self.wheel_width),
            positive("n_driven", self.n_driven as f64),
            positive("clearance", self.clearance),
            non_negative("design_acceleration", self.design_acceleration),
        ];
        checks.into_iter().filter_map(Result::err).collect()
    }

    pub fn track_in_stock_range(&self) -> bool {
        let (lo, hi) = STOCK_TRACK_RANGE;
        self.track_width >= lo - 1e-12 && self.track_width <= hi + 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CasterParams {
    pub static_friction_torque: f64,
    pub viscous_coeff: f64,
    pub caster_wheel_radius: f64,
}

impl Default for CasterParams {
    fn default() -> Self {
        Self { static_friction_torque: 0.4, viscous_coeff: 0.05, caster_wheel_radius: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorSpec {
    /// Continuous output torque after the gearbox, N·m per motor.
    pub continuous_torque: f64,
    pub gear_ratio: f64,
    pub duty_limit_minutes: f64,
    /// Fraction of full speed the operator is allowed to command.
    pub capacity_fraction: f64,
    /// Ground speed of an unloaded wheel at full duty, m/s.
    pub no_load_wheel_speed: f64,
}

impl Default for MotorSpec {
    fn default() -> Self {
        Self {
            continuous_torque: 31.42,
            gear_ratio: 32.0,
            duty_limit_minutes: 15.0,
            capacity_fraction: 0.15,
            no_load_wheel_speed: 0.85 / 0.15,
        }
    }
}

impl MotorSpec {
    /// Commanded wheel speed at full stick, m/s.
    pub fn peak_wheel_speed(&self) -> f64 {
        self.capacity_fraction * self.no_load_wheel_speed
    }

    /// Torque one motor can deliver at standstill for a given duty.
    pub fn available_torque_at_duty(&self, duty: f64) -> f64 {
        duty.abs().min(1.0) * self.continuous_torque
    }

    /// Torque one motor can deliver at full duty while turning at `speed`.
    pub fn available_torque_at_speed(&self, speed: f64) -> f64 {
        self.continuous_torque * (1.0 - speed.abs() / self.no_load_wheel_speed).max(0.0)
    }

    pub fn validate(&self) -> Vec<ParamError> {
        let checks = [
            positive("continuous_torque", self.continuous_torque),
            positive("gear_ratio", self.gear_ratio),
            positive("duty_limit_minutes", self.duty_limit_minutes),
            in_range("capacity_fraction", self.capacity_fraction, f64::MIN_POSITIVE, 1.0),
            positive("no_load_wheel_speed", self.no_load_wheel_speed),
        ];
        checks.into_iter().filter_map(Result::err).collect()
    }
}

/// A driven motor stalls when its load exceeds what the current duty can deliver.
pub fn stalls(motor: &MotorSpec, load_per_motor: f64, duty: f64) -> bool {
    duty != 0.0 && load_per_motor > motor.available_torque_at_duty(duty)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizingReport {
    pub tractive_force: f64,
    /// Total torque at the driven wheels, N·m.
    pub wheel_torque: f64,
    pub motor_torque: f64,
    /// Wheel RPM at the commanded peak speed.
    pub required_rpm: f64,
    /// Total torque the driven motors can supply, N·m.
    pub available_torque: f64,
    pub feasible: bool,
    pub margin: f64,
}

pub fn rolling_resistance(mass: f64, incline: f64, c_rr: f64) -> Result<f64, ParamError> {
    let mass = positive("mass", mass)?;
    let c_rr = non_negative("c_rr", c_rr)?;
    Ok(c_rr * mass * GRAVITY * cos(incline))
}

pub fn tractive_force(mass: f64, accel: f64, incline: f64, c_rr: f64) -> Result<f64, ParamError> {
    let rr = rolling_resistance(mass, incline, c_rr)?;
    Ok(mass * accel + mass * GRAVITY * sin(incline) + rr)
}

/// Returns `(total wheel torque, torque per motor)`.
pub fn wheel_and_motor_torque(force: f64, wheel_radius: f64, n_driven: u32) -> Result<(f64, f64), ParamError> {
    let r = positive("wheel_radius", wheel_radius)?;
    if n_driven == 0 {
        return Err(ParamError::NotPositive { name: "n_driven", value: 0.0 });
    }
    let wheel = force * r;
    Ok((wheel, wheel / n_driven as f64))
}

pub fn motor_rpm(speed: f64, wheel_radius: f64) -> Result<f64, ParamError> {
    let r = positive("wheel_radius", wheel_radius)?;
    let v = non_negative("speed", speed)?;
    Ok(v * 60.0 / (2.0 * PI * r))
}

/// Per-motor torque needed to hold a steady speed on a terrain patch.
pub fn steady_load_per_motor(chassis: &ChassisConfig, terrain: &TerrainParams) -> Result<f64, ParamError> {
    let f = tractive_force(chassis.mass, 0.0, terrain.incline, terrain.c_rr)?;
    Ok(wheel_and_motor_torque(f, chassis.wheel_radius, chassis.n_driven)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CasterState {
    /// Body-frame contact point (forward, left), m.
    pub position: (f64, f64),
    pub velocity: (f64, f64),
    /// Vertical load, N. Negative means the caster would lift.
    pub vertical_load: f64,
    pub roll_torque: f64,
    pub swivel_torque: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CasterReport {
    pub a_x: f64,
    pub alpha_z: f64,
    /// Left caster first.
    pub casters: [CasterState; 2],
    pub tip_over: bool,
}

/// Caster kinematics, loads and friction torques for given driven-wheel forces.
///
/// Load transfer `m·a_x·h_cg/(2L)` is added to the left caster and taken from
/// the right one, so the two loads always sum to twice the static share.
pub fn caster_analysis(
    chassis: &ChassisConfig,
    caster: &CasterParams,
    force_left: f64,
    force_right: f64,
    terrain: &TerrainParams,
    swivel_rate: f64,
) -> Result<CasterReport, ParamError> {
    if let Some(e) = chassis.validate().into_iter().next() {
        return Err(e);
    }
    non_negative("static_friction_torque", caster.static_friction_torque)?;
    non_negative("viscous_coeff", caster.viscous_coeff)?;
    non_negative("caster_wheel_radius", caster.caster_wheel_radius)?;

    let m = chassis.mass;
    let b = chassis.half_track();
    let l = chassis.wheelbase;
    let a_x = (force_left + force_right) / m;
    let alpha_z = (force_right - force_left) * b / chassis.yaw_inertia;

    let static_share = chassis.cg_to_front / l * m * GRAVITY;
    let transfer = m * a_x * chassis.cg_height / (2.0 * l);
    let swivel_torque = caster.static_friction_torque + caster.viscous_coeff * swivel_rate;

    let positions = chassis.caster_positions();
    let signs = [1.0, -1.0];
    let casters = core::array::from_fn(|i| {
        let (x_c, y_c) = positions[i];
        let vertical_load = static_share + signs[i] * transfer;
        CasterState {
            position: (x_c, y_c),
            velocity: (a_x - alpha_z * y_c, alpha_z * x_c),
            vertical_load,
            roll_torque: vertical_load * terrain.c_rr * caster.caster_wheel_radius,
            swivel_torque,
        }
    });
    let tip_over = casters.iter().any(|c: &CasterState| c.vertical_load < 0.0);
    Ok(CasterReport { a_x, alpha_z, casters, tip_over })
}

/// Knobs for [`terrain_feasibility_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizingOptions {
    pub accel: f64,
    /// Speed to hold at full duty; `None` compares against standstill torque.
    pub hold_speed: Option<f64>,
    pub safety_factor: f64,
}

impl SizingOptions {
    pub fn accel(accel: f64) -> Self {
        Self { accel, hold_speed: None, safety_factor: 1.0 }
    }
}

pub fn terrain_feasibility(
    chassis: &ChassisConfig,
    motor: &MotorSpec,
    terrain: &TerrainParams,
    accel: f64,
) -> Result<SizingReport, ParamError> {
    terrain_feasibility_with(chassis, motor, terrain, SizingOptions::accel(accel))
}

/// Required versus available torque. Required torque is multiplied by the
/// safety factor; available torque is derated along the motor's torque-speed
/// line when a hold speed is given.
pub fn terrain_feasibility_with(
    chassis: &ChassisConfig,
    motor: &MotorSpec,
    terrain: &TerrainParams,
    opts: SizingOptions,
) -> Result<SizingReport, ParamError> {
    let force = tractive_force(chassis.mass, opts.accel, terrain.incline, terrain.c_rr)?;
    let (wheel_torque, motor_torque) = wheel_and_motor_torque(force, chassis.wheel_radius, chassis.n_driven)?;
    let per_motor = match opts.hold_speed {
        Some(v) => motor.available_torque_at_speed(v),
        None => motor.continuous_torque,
    };
    let available_torque = chassis.n_driven as f64 * per_motor;
    let required = wheel_torque * opts.safety_factor;
    let margin = if required > 0.0 { available_torque / required } else { f64::INFINITY };
    Ok(SizingReport {
        tractive_force: force,
        wheel_torque,
        motor_torque,
        required_rpm: motor_rpm(motor.peak_wheel_speed(), chassis.wheel_radius)?,
        available_torque,
        feasible: available_torque >= required,
        margin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayloadEstimate {
    /// Mass that can be added on top of `chassis.mass`, kg.
    pub added_mass: f64,
    /// The chassis cannot hold the target speed even unloaded.
    pub zero_capacity: bool,
}

/// Largest mass that can be added while the motors, at full capacity, still
/// hold `target_speed` with the given safety factor on required torque.
/// Solved by bisection on the added mass.
pub fn max_payload(
    chassis: &ChassisConfig,
    motor: &MotorSpec,
    terrain: &TerrainParams,
    target_speed: f64,
    safety_factor: f64,
) -> Result<PayloadEstimate, ParamError> {
    if safety_factor.is_nan() || safety_factor < 1.0 {
        return Err(ParamError::OutOfRange { name: "safety_factor", value: safety_factor, min: 1.0, max: f64::INFINITY });
    }
    non_negative("target_speed", target_speed)?;
    let opts = SizingOptions {
        accel: chassis.design_acceleration,
        hold_speed: Some(target_speed),
        safety_factor,
    };
    let fits = |added: f64| -> Result<bool, ParamError> {
        let c = chassis.clone().with_mass(chassis.mass + added);
        Ok(terrain_feasibility_with(&c, motor, terrain, opts)?.feasible)
    };

    if !fits(0.0)? {
        return Ok(PayloadEstimate { added_mass: 0.0, zero_capacity: true });
    }
    let mut lo = 0.0;
    let mut hi = chassis.mass.max(1.0);
    while fits(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > 1e9 {
            // resistance-free terrain: capacity is unbounded
            return Ok(PayloadEstimate { added_mass: f64::INFINITY, zero_capacity: false });
        }
    }
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if fits(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(PayloadEstimate { added_mass: lo, zero_capacity: false })
}

/// Least-squares fit of `(wheel_radius, design_acceleration)` to published
/// total-torque values, each sample weighted by its inverse torque so the
/// residuals are relative.
///
/// Model: `τ = r·m·(a + g·sinθ + c_rr·g·cosθ)`, linear in `r` and `r·a`.
pub fn fit_radius_and_acceleration(mass: f64, samples: &[(TerrainParams, f64)]) -> Result<(f64, f64), ParamError> {
    let mass = positive("mass", mass)?;
    // normal equations for [r, r·a]
    let (mut s11, mut s12, mut s22, mut t1, mut t2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (terrain, torque) in samples {
        let w = 1.0 / positive("torque", *torque)?;
        let x1 = w * mass * GRAVITY * (sin(terrain.incline) + terrain.c_rr * cos(terrain.incline));
        let x2 = w * mass;
        let y = w * torque;
        s11 += x1 * x1;
        s12 += x1 * x2;
        s22 += x2 * x2;
        t1 += x1 * y;
        t2 += x2 * y;
    }
    let det = s11 * s22 - s12 * s12;
    if det.is_nan() || det.abs() <= 1e-12 {
        return Err(ParamError::NotPositive { name: "fit determinant", value: det });
    }
    let r = (t1 * s22 - t2 * s12) / det;
    let ra = (s11 * t2 - s12 * t1) / det;
    Ok((positive("fitted wheel_radius", r)?, ra / r))
}

/// The published torque table paired with its library terrains.
pub fn torque_table_samples(library: &[TerrainRecord]) -> Option<Vec<(TerrainParams, f64)>> {
    TORQUE_TABLE
        .iter()
        .map(|row| {
            let rec = find_terrain(library, row.library_name)?;
            let mut t = rec.params(row.pick);
            t.name = row.surface.into();
            Some((t, row.torque))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TEN_DEG: f64 = 10.0 * PI / 180.0;

    #[test]
    fn rolling_resistance_examples() {
        assert!((rolling_resistance(45.0, 0.0, 0.002).unwrap() - 0.8826).abs() < 1e-4);
        assert_eq!(rolling_resistance(45.0, 0.0, 0.0).unwrap(), 0.0);
        assert!((rolling_resistance(45.0, TEN_DEG, 0.2).unwrap() - 86.92).abs() < 5e-3);
        assert!(rolling_resistance(-1.0, 0.0, 0.1).is_err());
        assert!(rolling_resistance(45.0, 0.0, -0.1).is_err());
    }

    #[test]
    fn tractive_force_examples() {
        assert_eq!(tractive_force(45.0, 0.0, 0.0, 0.0).unwrap(), 0.0);
        // 86.50 with standard gravity (86.53 only with g = 9.81)
        assert!((tractive_force(45.0, 0.2, TEN_DEG, 0.002).unwrap() - 86.50).abs() < 5e-3);
    }

    #[test]
    fn torque_and_rpm_examples() {
        let (w, m) = wheel_and_motor_torque(100.0, 0.15, 2).unwrap();
        assert!((w - 15.0).abs() < 1e-12 && (m - 7.5).abs() < 1e-12);
        assert_eq!(wheel_and_motor_torque(0.0, 0.3, 2).unwrap(), (0.0, 0.0));
        let (w, m) = wheel_and_motor_torque(42.0, 0.2, 1).unwrap();
        assert_eq!(w, m);
        assert!(wheel_and_motor_torque(1.0, 0.0, 2).is_err());
        assert!(wheel_and_motor_torque(1.0, 0.1, 0).is_err());

        assert_eq!(motor_rpm(0.0, 0.1).unwrap(), 0.0);
        assert!((motor_rpm(2.0 * PI * 0.1, 0.1).unwrap() - 60.0).abs() < 1e-12);
        assert!(motor_rpm(1.0, 0.0).is_err());
    }

    #[test]
    fn calibrated_rpm_at_peak() {
        // 0.85·60/(2π·0.0935)
        let rpm = motor_rpm(0.85, CALIBRATED_WHEEL_RADIUS).unwrap();
        assert!((rpm - 86.8124).abs() < 1e-3, "{rpm}");
    }

    #[test]
    fn symmetric_drive_has_no_yaw() {
        let c = ChassisConfig::default();
        let r = caster_analysis(&c, &CasterParams::default(), 20.0, 20.0, &TerrainParams::flat("x", 0.05), 0.3).unwrap();
        assert_eq!(r.alpha_z, 0.0);
        assert_eq!(r.casters[0].velocity.1, 0.0);
        assert_eq!(r.casters[1].velocity.1, 0.0);
        assert_eq!(r.casters[0].velocity.0, r.casters[1].velocity.0);
    }

    #[test]
    fn idle_casters_have_static_swivel_only() {
        let c = ChassisConfig::default();
        let p = CasterParams::default();
        let r = caster_analysis(&c, &p, 0.0, 0.0, &TerrainParams::flat("x", 0.05), 0.0).unwrap();
        assert_eq!(r.casters[0].swivel_torque, p.static_friction_torque);
        assert_eq!(r.casters[0].vertical_load, r.casters[1].vertical_load);
    }

    #[test]
    fn tip_over_is_reported() {
        let c = ChassisConfig { cg_height: 5.0, cg_to_front: 0.05, ..ChassisConfig::default() };
        let r = caster_analysis(&c, &CasterParams::default(), 200.0, 200.0, &TerrainParams::flat("x", 0.05), 0.0).unwrap();
        assert!(r.tip_over);
        assert!(r.casters[1].vertical_load < 0.0);
    }

    #[test]
    fn wet_soil_margin() {
        // required 15.55 N·m against two motors of 31.42 N·m
        let c = ChassisConfig::default();
        let m = MotorSpec::default();
        let lib = default_terrain_library();
        let soil = find_terrain(&lib, AVERAGE_TERRAIN).unwrap().params(RangePick::Max);
        let r = terrain_feasibility(&c, &m, &soil, c.design_acceleration).unwrap();
        assert!(r.feasible);
        assert!((r.margin - 62.84 / 15.55).abs() < 0.1, "{}", r.margin);
        assert!((r.available_torque - 62.84).abs() < 1e-9);
    }

    #[test]
    fn frictionless_flat_needs_nothing() {
        let r = terrain_feasibility(&ChassisConfig::default(), &MotorSpec::default(), &TerrainParams::flat("ice", 0.0), 0.0).unwrap();
        assert_eq!(r.wheel_torque, 0.0);
        assert!(r.feasible);
    }

    #[test]
    fn payload_rejects_low_safety_factor() {
        let lib = default_terrain_library();
        let t = find_terrain(&lib, AVERAGE_TERRAIN).unwrap().params(RangePick::Mid);
        assert!(max_payload(&ChassisConfig::default(), &MotorSpec::default(), &t, 0.61, 0.9).is_err());
    }

    #[test]
    fn payload_zero_capacity() {
        let t = TerrainParams::new("cliff", 0.4, 1.2);
        let p = max_payload(&ChassisConfig::default(), &MotorSpec::default(), &t, 0.61, 1.5).unwrap();
        assert!(p.zero_capacity);
        assert_eq!(p.added_mass, 0.0);
    }

    #[test]
    fn payload_vanishes_with_huge_safety_factor() {
        let lib = default_terrain_library();
        let t = find_terrain(&lib, AVERAGE_TERRAIN).unwrap().params(RangePick::Mid);
        let c = ChassisConfig::default();
        let m = MotorSpec::default();
        let p = max_payload(&c, &m, &t, 0.61, 1e6).unwrap();
        assert!(p.zero_capacity || p.added_mass < 1e-3);
    }

    #[test]
    fn fit_reproduces_shipped_pair() {
        let lib = default_terrain_library();
        let samples = torque_table_samples(&lib).unwrap();
        let (r, a) = fit_radius_and_acceleration(45.0, &samples).unwrap();
        assert!((r - CALIBRATED_WHEEL_RADIUS).abs() < 5e-5, "{r}");
        assert!((a - CALIBRATED_DESIGN_ACCELERATION).abs() < 5e-3, "{a}");
    }

    #[test]
    fn validate_enumerates_every_violation() {
        let c = ChassisConfig { mass: -1.0, wheel_radius: 0.0, n_driven: 0, ..ChassisConfig::default() };
        assert_eq!(c.validate().len(), 3);
    }

    fn chassis_strategy() -> impl Strategy<Value = ChassisConfig> {
        (5.0..500.0f64, 0.5..3.0f64, 0.3..3.0f64, 0.05..2.0f64, 0.01..1.0f64, 0.5..50.0f64).prop_map(
            |(mass, track, wheelbase, h, lf, iz)| ChassisConfig {
                mass,
                track_width: track,
                wheelbase,
                cg_height: h,
                cg_to_front: lf * wheelbase,
                yaw_inertia: iz,
                ..ChassisConfig::default()
            },
        )
    }

    proptest! {
        #[test]
        fn tractive_force_monotone(
            m in 1.0..300.0f64, a in 0.0..3.0f64, th in 0.0..1.5f64, c in 0.0..0.5f64,
            dm in 0.0..50.0f64, da in 0.0..1.0f64, dth in 0.0..0.05f64, dc in 0.0..0.1f64,
        ) {
            let f = tractive_force(m, a, th, c).unwrap();
            prop_assert!(tractive_force(m + dm, a, th, c).unwrap() >= f);
            prop_assert!(tractive_force(m, a + da, th, c).unwrap() >= f);
            prop_assert!(tractive_force(m, a, th, c + dc).unwrap() >= f);
            // d/dθ (sinθ + c·cosθ) ≥ 0 while c·tanθ ≤ 1
            let th2 = th + dth;
            if c * crate::math::sin(th2) <= crate::math::cos(th2) {
                prop_assert!(tractive_force(m, a, th2, c).unwrap() >= f - 1e-12 * f.abs());
            }
        }

        #[test]
        fn tractive_force_reduces_to_rolling(m in 1.0..300.0f64, c in 0.0..0.5f64) {
            prop_assert_eq!(tractive_force(m, 0.0, 0.0, c).unwrap(), rolling_resistance(m, 0.0, c).unwrap());
        }

        #[test]
        fn tractive_force_linear_in_mass(m in 1.0..300.0f64, k in 0.1..10.0f64, a in 0.0..3.0f64, th in -1.0..1.0f64, c in 0.0..0.5f64) {
            let f = tractive_force(m, a, th, c).unwrap();
            let fk = tractive_force(k * m, a, th, c).unwrap();
            prop_assert!((fk - k * f).abs() <= 1e-9 * fk.abs().max(1.0));
        }

        #[test]
        fn caster_loads_sum_to_static_share(
            chassis in chassis_strategy(),
            fl in -300.0..300.0f64, fr in -300.0..300.0f64,
        ) {
            let r = caster_analysis(&chassis, &CasterParams::default(), fl, fr, &TerrainParams::flat("x", 0.05), 0.0).unwrap();
            let sum = r.casters[0].vertical_load + r.casters[1].vertical_load;
            let expect = 2.0 * chassis.cg_to_front / chassis.wheelbase * chassis.mass * GRAVITY;
            prop_assert!((sum - expect).abs() <= 1e-9 * expect);
        }

        #[test]
        fn symmetric_forces_mirror_casters(chassis in chassis_strategy(), f in -300.0..300.0f64) {
            let r = caster_analysis(&chassis, &CasterParams::default(), f, f, &TerrainParams::flat("x", 0.05), 0.2).unwrap();
            prop_assert_eq!(r.alpha_z, 0.0);
            prop_assert_eq!(r.casters[0].velocity, r.casters[1].velocity);
            prop_assert_eq!(r.casters[0].swivel_torque, r.casters[1].swivel_torque);
        }

        #[test]
        fn payload_monotone(sf in 1.0..3.0f64, dsf in 0.0..1.0f64, c in 0.01..0.2f64, th in 0.0..0.3f64) {
            let ch = ChassisConfig::default();
            let m = MotorSpec::default();
            let t = TerrainParams::new("t", c, th);
            let base = max_payload(&ch, &m, &t, 0.61, sf).unwrap().added_mass;
            prop_assert!(max_payload(&ch, &m, &t, 0.61, sf + dsf).unwrap().added_mass <= base + 1e-6);
            prop_assert!(max_payload(&ch, &m, &TerrainParams::new("t", 2.0 * c, th), 0.61, sf).unwrap().added_mass <= base + 1e-6);
            prop_assert!(max_payload(&ch, &m, &TerrainParams::new("t", c, th + 0.05), 0.61, sf).unwrap().added_mass <= base + 1e-6);
        }

        #[test]
        fn payload_sits_on_margin_one(sf in 1.0..3.0f64, c in 0.0..0.2f64, th in 0.0..0.3f64) {
            let ch = ChassisConfig::default();
            let m = MotorSpec::default();
            let t = TerrainParams::new("t", c, th);
            let p = max_payload(&ch, &m, &t, 0.61, sf).unwrap();
            prop_assume!(!p.zero_capacity);
            let loaded = ch.clone().with_mass(ch.mass + p.added_mass);
            let opts = SizingOptions { accel: ch.design_acceleration, hold_speed: Some(0.61), safety_factor: sf };
            let r = terrain_feasibility_with(&loaded, &m, &t, opts).unwrap();
            prop_assert!(r.margin >= 1.0 && r.margin <= 1.0 + 1e-6, "margin {}", r.margin);
        }
    }
}
