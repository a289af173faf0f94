//! The drive control loop: arcade mixing, an emulated motor driver running
//! PID-plus-feedforward velocity control on a first-order motor model,
//! relay switching and telemetry.
//!
//! Motor-side quantities are in encoder counts; ground-side quantities are
//! in meters. [`DriveConfig`] owns the conversion.

use alloc::collections::VecDeque;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::crsf::{ChannelMap, ChannelState};
use crate::error::{positive, ParamError};
use crate::kinematics::{Pose, WheelSpeeds};
use crate::math::{exp, floor};
use crate::terramech::MotorSpec;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DriveCommand {
    pub throttle: f64,
    pub steering: f64,
}

/// Arcade mixing: positive steering speeds up the left wheel.
pub fn mix_differential(cmd: DriveCommand, peak_wheel_speed: f64) -> WheelSpeeds {
    let t = cmd.throttle.clamp(-1.0, 1.0);
    let s = cmd.steering.clamp(-1.0, 1.0);
    WheelSpeeds {
        left: (t + s).clamp(-1.0, 1.0) * peak_wheel_speed,
        right: (t - s).clamp(-1.0, 1.0) * peak_wheel_speed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    /// Duty per count/s of error.
    pub kp: f64,
    /// Duty per count of accumulated error.
    pub ki: f64,
    /// Duty per count/s² of error rate.
    pub kd: f64,
    /// Duty per count/s of setpoint.
    pub feedforward: f64,
    /// Bound on the accumulated error, counts.
    pub integral_limit: f64,
}

impl PidGains {
    /// Gains derived from the plant: feedforward maps no-load speed to full
    /// duty, the proportional term leaves a quarter of the open-loop load
    /// droop, and the integral term places a double closed-loop pole at
    /// `(1 + kp·ω₀)/(2τ)`.
    pub fn derived(plant: &PlantParams) -> Self {
        let w0 = plant.no_load_speed;
        let kp_norm = 3.0;
        let ki_norm = (1.0 + kp_norm) * (1.0 + kp_norm) / (4.0 * plant.time_constant);
        Self {
            kp: kp_norm / w0,
            ki: ki_norm / w0,
            kd: 0.0,
            feedforward: 1.0 / w0,
            integral_limit: w0 / ki_norm,
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        crate::error::non_negative("kp", self.kp)?;
        crate::error::non_negative("ki", self.ki)?;
        crate::error::non_negative("kd", self.kd)?;
        positive("feedforward", self.feedforward)?;
        positive("integral_limit", self.integral_limit)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: Option<f64>,
}

/// One controller update. Returns the duty in [-1, 1] and the next state.
///
/// The integral is not advanced on a step whose unclamped output saturates
/// in the direction the error would push it.
pub fn pid_step(gains: &PidGains, setpoint: f64, measured: f64, dt: f64, state: PidState) -> (f64, PidState) {
    let error = setpoint - measured;
    let derivative = match state.prev_error {
        Some(prev) if dt > 0.0 => (error - prev) / dt,
        _ => 0.0,
    };
    let base = gains.feedforward * setpoint + gains.kp * error + gains.kd * derivative;
    let lim = gains.integral_limit;
    let candidate = (state.integral + error * dt).clamp(-lim, lim);
    let raw = base + gains.ki * candidate;
    let winding = (raw > 1.0 && error > 0.0) || (raw < -1.0 && error < 0.0);
    let integral = if winding { state.integral } else { candidate };
    let duty = (base + gains.ki * integral).clamp(-1.0, 1.0);
    (duty, PidState { integral, prev_error: Some(error) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Wheel speed at full duty without load, counts/s.
    pub no_load_speed: f64,
    pub time_constant: f64,
    /// Output torque at standstill and full duty, N·m.
    pub stall_torque: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotorChannelState {
    pub commanded_speed: f64,
    pub measured_speed: f64,
    pub encoder_count: i64,
    /// Fractional counts not yet reported, in [0, 1).
    pub encoder_residual: f64,
    pub duty: f64,
    pub pid: PidState,
    pub stalled: bool,
}

/// Advances one motor by `dt` under a duty and an opposing load torque.
///
/// Speed relaxes exponentially toward `duty·ω₀` less the droop caused by
/// the load along a linear torque-speed line. If the load exceeds what the
/// duty can deliver at standstill the wheel stops and `stalled` is set.
pub fn motor_plant_step(state: MotorChannelState, duty: f64, load_torque: f64, dt: f64, plant: &PlantParams) -> MotorChannelState {
    let duty = duty.clamp(-1.0, 1.0);
    let mut next = MotorChannelState { duty, ..state };
    let available = duty.abs() * plant.stall_torque;
    if duty != 0.0 && load_torque > available {
        next.measured_speed = 0.0;
        next.stalled = true;
    } else {
        let target = if duty == 0.0 {
            0.0
        } else {
            duty.signum() * (duty.abs() - load_torque / plant.stall_torque) * plant.no_load_speed
        };
        let decay = exp(-dt / plant.time_constant);
        next.measured_speed = target + (state.measured_speed - target) * decay;
        next.stalled = false;
    }
    let total = state.encoder_residual + next.measured_speed * dt;
    let whole = floor(total);
    next.encoder_count = state.encoder_count + whole as i64;
    next.encoder_residual = total - whole;
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryModel {
    pub nominal_voltage: f64,
    /// Volts lost per unit of summed absolute duty.
    pub sag_per_duty: f64,
}

impl Default for BatteryModel {
    fn default() -> Self {
        Self { nominal_voltage: 24.0, sag_per_duty: 0.5 }
    }
}

impl BatteryModel {
    pub fn voltage(&self, duties: [f64; 2]) -> f64 {
        self.nominal_voltage - self.sag_per_duty * (duties[0].abs() + duties[1].abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RelayBank(pub [bool; 4]);

impl RelayBank {
    pub const OFF: RelayBank = RelayBank([false; 4]);

    pub fn any_on(&self) -> bool {
        self.0.iter().any(|&r| r)
    }

    pub fn count_on(&self) -> usize {
        self.0.iter().filter(|&&r| r).count()
    }

    pub fn mask(&self) -> u8 {
        self.0.iter().enumerate().fold(0, |m, (i, &on)| m | ((on as u8) << i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    /// ms
    pub timestamp: u64,
    pub encoder_counts: [i64; 2],
    /// counts/s
    pub motor_speeds: [f64; 2],
    pub battery_voltage: f64,
    pub relay_states: [bool; 4],
    pub link_ok: bool,
    pub pose: Pose,
}

pub const DEFAULT_TICK_HZ: f64 = 50.0;
pub const DEFAULT_COUNTS_PER_REV: f64 = 5000.0;
pub const DEFAULT_TIME_CONSTANT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    pub channel_map: ChannelMap,
    pub motor: MotorSpec,
    pub wheel_radius: f64,
    pub counts_per_rev: f64,
    pub plant: PlantParams,
    pub gains: PidGains,
    pub battery: BatteryModel,
    pub failsafe_ms: u64,
}

impl DriveConfig {
    pub fn new(motor: MotorSpec, wheel_radius: f64) -> Self {
        let counts_per_meter = DEFAULT_COUNTS_PER_REV / (2.0 * PI * wheel_radius);
        let plant = PlantParams {
            no_load_speed: motor.no_load_wheel_speed * counts_per_meter,
            time_constant: DEFAULT_TIME_CONSTANT,
            stall_torque: motor.continuous_torque,
        };
        Self {
            channel_map: ChannelMap::default(),
            motor,
            wheel_radius,
            counts_per_rev: DEFAULT_COUNTS_PER_REV,
            plant,
            gains: PidGains::derived(&plant),
            battery: BatteryModel::default(),
            failsafe_ms: crate::crsf::DEFAULT_FAILSAFE_MS,
        }
    }

    pub fn counts_per_meter(&self) -> f64 {
        self.counts_per_rev / (2.0 * PI * self.wheel_radius)
    }

    pub fn to_counts(&self, meters_per_s: f64) -> f64 {
        meters_per_s * self.counts_per_meter()
    }

    pub fn to_meters(&self, counts_per_s: f64) -> f64 {
        counts_per_s / self.counts_per_meter()
    }
}

/// Emulated two-channel motor driver with on-board velocity control.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotorDriver {
    pub channels: [MotorChannelState; 2],
}

impl MotorDriver {
    pub fn set_speed(&mut self, motor: usize, counts_per_s: f64) {
        self.channels[motor].commanded_speed = counts_per_s;
    }

    pub fn encoder(&self, motor: usize) -> i64 {
        self.channels[motor].encoder_count
    }

    pub fn speed(&self, motor: usize) -> f64 {
        self.channels[motor].measured_speed
    }

    pub fn voltage(&self, battery: &BatteryModel) -> f64 {
        battery.voltage([self.channels[0].duty, self.channels[1].duty])
    }

    /// Runs the velocity loop and the motor model for both channels.
    ///
    /// A zero speed command releases the motor: duty drops to zero and the
    /// controller state is cleared.
    pub fn step(&mut self, cfg: &DriveConfig, loads: [f64; 2], dt: f64) {
        for (ch, load) in self.channels.iter_mut().zip(loads) {
            let duty = if ch.commanded_speed == 0.0 {
                ch.pid = PidState::default();
                0.0
            } else {
                let (duty, pid) = pid_step(&cfg.gains, ch.commanded_speed, ch.measured_speed, dt, ch.pid);
                ch.pid = pid;
                duty
            };
            *ch = motor_plant_step(*ch, duty, load, dt, &cfg.plant);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DriveState {
    pub driver: MotorDriver,
    pub relays: RelayBank,
}

/// What one control tick did.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickActions {
    pub command: DriveCommand,
    /// counts/s, left then right.
    pub setpoints: [f64; 2],
    pub relays: RelayBank,
    pub stalled: [bool; 2],
    pub telemetry: TelemetryRecord,
}

/// One pass of the control loop: normalize channels, mix, command the
/// driver, switch relays, step the driver and collect feedback.
///
/// With the link down all setpoints are zero and every relay is off.
/// `loads` are the opposing torques per motor from the terrain; the
/// telemetry pose is left at the origin for the caller to fill in.
pub fn control_tick(inputs: &ChannelState, state: &mut DriveState, cfg: &DriveConfig, loads: [f64; 2], now_ms: u64, dt: f64) -> TickActions {
    let map = &cfg.channel_map;
    let command = DriveCommand {
        throttle: inputs.command(map.throttle, map.deadzone),
        steering: inputs.command(map.steering, map.deadzone),
    };
    let wheels = mix_differential(command, cfg.motor.peak_wheel_speed());
    let setpoints = [cfg.to_counts(wheels.left), cfg.to_counts(wheels.right)];
    state.driver.set_speed(0, setpoints[0]);
    state.driver.set_speed(1, setpoints[1]);

    let mut relays = RelayBank::OFF;
    for (relay, &ch) in relays.0.iter_mut().zip(&map.switches) {
        *relay = inputs.command(ch, map.deadzone) > map.switch_threshold;
    }
    state.relays = relays;

    state.driver.step(cfg, loads, dt);

    let ch = &state.driver.channels;
    let telemetry = TelemetryRecord {
        timestamp: now_ms,
        encoder_counts: [ch[0].encoder_count, ch[1].encoder_count],
        motor_speeds: [ch[0].measured_speed, ch[1].measured_speed],
        battery_voltage: state.driver.voltage(&cfg.battery),
        relay_states: relays.0,
        link_ok: inputs.link_ok,
        pose: Pose::ORIGIN,
    };
    TickActions { command, setpoints, relays, stalled: [ch[0].stalled, ch[1].stalled], telemetry }
}

/// Bounded FIFO that drops the oldest entry when full.
#[derive(Debug, Clone)]
pub struct TelemetryQueue<T> {
    items: VecDeque<T>,
    capacity: usize,
    dropped: u64,
}

impl<T> TelemetryQueue<T> {
    pub fn new(capacity: usize) -> Self {
        Self { items: VecDeque::with_capacity(capacity), capacity: capacity.max(1), dropped: 0 }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() >= self.capacity {
            self.items.pop_front();
            self.dropped += 1;
        }
        self.items.push_back(item);
    }

    pub fn pop(&mut self) -> Option<T> {
        self.items.pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn drain(&mut self) -> impl Iterator<Item = T> + '_ {
        self.items.drain(..)
    }
}
