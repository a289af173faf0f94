//! Files, logs and front ends for the over-the-row sprayer simulator.
//!
//! * [`scenario`] TOML scenario files with unit-suffixed keys.
//! * [`trace`] stick traces (JSON lines) and raw link captures.
//! * [`runlog`] run logs, scripted runs and byte-exact replay.
//! * [`sizing`] motor sizing reports and the terrain library file.
//! * [`serve`] WebSocket teleoperation server.

pub mod runlog;
pub mod scenario;
pub mod serve;
pub mod sizing;
pub mod trace;
