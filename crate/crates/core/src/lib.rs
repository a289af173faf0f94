//! Models for an over-the-row, differential-drive sprayer robot.
//!
//! Everything in this crate is pure computation over value types and builds
//! without `std` (an allocator is required). File formats, the CLI and the
//! teleoperation server live in the `overrow` crate.
//!
//! Module map:
//!
//! * [`kinematics`] wheel speeds to body twist, exact arc pose integration.
//! * [`terramech`] tractive force, torque and RPM sizing, caster loads, payload.
//! * [`crsf`] RC link codec, channel normalization and failsafe watchdog.
//! * [`drive`] arcade mixing, PID with feedforward, motor plant, control tick.
//! * [`packet_serial`] byte-level emulation of the motor driver command set.
//! * [`sprayer`] tank, nozzle flow and coverage accounting.
//! * [`field`] field layout, world stepper, clearance checks, headland turns.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod crsf;
pub mod drive;
mod error;
pub mod field;
pub mod geometry;
pub mod kinematics;
pub(crate) mod math;
pub mod packet_serial;
pub mod sprayer;
pub mod terramech;

pub use error::ParamError;

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.80665;

/// Liters per US gallon.
pub const LITERS_PER_GALLON: f64 = 3.785411784;
