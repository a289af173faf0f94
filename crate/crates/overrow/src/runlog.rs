//! Run logs: one JSON object per line.
//!
//! The first line is a manifest carrying the world configuration, its hash,
//! and every input the stepper received. Then come telemetry, spray and
//! event records in step order, and a closing summary. Re-running the
//! manifest's inputs reproduces the whole file byte for byte.

use overrow_core::field::{EventKind, InputRecorder, LogRecord, StepOutput, StickScript, World, WorldConfig, WorldError};
use overrow_core::kinematics::Pose;
use overrow_core::sprayer::coverage_report;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::trace::{lines_to_script, TraceLine};

pub const LOG_VERSION: u32 = 1;

/// SHA-256 over the canonical JSON form of a world configuration.
pub fn config_hash(cfg: &WorldConfig) -> String {
    let json = serde_json::to_string(cfg).expect("configs serialize");
    hex::encode(Sha256::digest(json.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub dt_ms: u64,
    pub duration_ms: u64,
    pub config: WorldConfig,
    pub inputs: Vec<TraceLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub duration_s: f64,
    pub distance_m: f64,
    pub mean_speed_mps: f64,
    pub final_pose: Pose,
    pub stalls: u64,
    pub clearance_violations: u64,
    pub over_height: u64,
    pub plots_sprayed: u64,
    pub plots_total: u64,
    pub open_time_s: f64,
    pub volume_l: f64,
    pub volume_gal: f64,
    pub area_m2: f64,
    pub endurance_remaining_min: f64,
    pub failsafes: u64,
    pub dry_runs: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Bookend {
    Manifest(Box<Manifest>),
    Summary(Summary),
}

#[derive(Debug, Default, Clone, Copy)]
struct Tally {
    distance: f64,
    stalls: u64,
    violations: u64,
    over_height: u64,
    failsafes: u64,
    dry_runs: u64,
}

/// A world being stepped and logged. Shared by scripted runs and the
/// teleoperation server so both produce the same log for the same inputs.
pub struct Session {
    pub world: World,
    recorder: InputRecorder,
    body: Vec<String>,
    tally: Tally,
}

impl Session {
    pub fn new(cfg: WorldConfig) -> Result<Self, WorldError> {
        Ok(Self { world: World::new(cfg)?, recorder: InputRecorder::new(), body: Vec::new(), tally: Tally::default() })
    }

    pub fn clock(&self) -> u64 {
        self.world.robot.clock
    }

    /// Steps once with the link bytes that arrived since the last tick.
    pub fn step(&mut self, uplink: &[u8]) -> StepOutput {
        self.recorder.record(self.world.robot.clock, uplink);
        let before = self.world.robot.pose;
        let out = self.world.step(uplink);
        let after = self.world.robot.pose;
        self.tally.distance += (after.x - before.x).hypot(after.y - before.y);
        for e in &out.events {
            match e.kind {
                EventKind::StallStart { .. } => self.tally.stalls += 1,
                EventKind::ClearanceViolation { .. } => self.tally.violations += 1,
                EventKind::OverHeight { .. } => self.tally.over_height += 1,
                EventKind::FailsafeEngaged => self.tally.failsafes += 1,
                EventKind::DryRun => self.tally.dry_runs += 1,
                _ => {}
            }
        }
        self.body.extend(out.records().map(|r| record_line(&r)));
        out
    }

    pub fn summary(&self) -> Summary {
        let w = &self.world;
        let cov = coverage_report(&w.robot.sprayer, &w.cfg.sprayer, Some(w.plots_sprayed()));
        let duration_s = w.robot.clock as f64 / 1000.0;
        Summary {
            duration_s,
            distance_m: self.tally.distance,
            mean_speed_mps: if duration_s > 0.0 { self.tally.distance / duration_s } else { 0.0 },
            final_pose: w.robot.pose,
            stalls: self.tally.stalls,
            clearance_violations: self.tally.violations,
            over_height: self.tally.over_height,
            plots_sprayed: cov.plots_sprayed,
            plots_total: w.cfg.layout.plots.len() as u64,
            open_time_s: cov.open_time,
            volume_l: cov.volume,
            volume_gal: cov.volume_gallons,
            area_m2: cov.area,
            endurance_remaining_min: cov.endurance_remaining / 60.0,
            failsafes: self.tally.failsafes,
            dry_runs: self.tally.dry_runs,
        }
    }

    pub fn finish(self) -> RunLog {
        let cfg = self.world.cfg.clone();
        let summary = self.summary();
        let manifest = Manifest {
            version: LOG_VERSION,
            config_hash: config_hash(&cfg),
            seed: cfg.seed,
            dt_ms: cfg.dt_ms,
            duration_ms: self.world.robot.clock,
            inputs: self.recorder.finish().iter().map(TraceLine::from_entry).collect(),
            config: cfg,
        };
        RunLog { manifest, body: self.body, summary }
    }
}

fn record_line(r: &LogRecord) -> String {
    serde_json::to_string(r).expect("log records serialize")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub manifest: Manifest,
    /// Telemetry, spray and event lines, without newlines.
    pub body: Vec<String>,
    pub summary: Summary,
}

impl RunLog {
    pub fn lines(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.body.len() + 2);
        out.push(serde_json::to_string(&Bookend::Manifest(Box::new(self.manifest.clone()))).expect("manifest serializes"));
        out.extend(self.body.iter().cloned());
        out.push(serde_json::to_string(&Bookend::Summary(self.summary.clone())).expect("summary serializes"));
        out
    }

    pub fn to_text(&self) -> String {
        self.lines().into_iter().map(|l| l + "\n").collect()
    }

    pub fn records(&self) -> impl Iterator<Item = LogRecord> + '_ {
        self.body.iter().map(|l| serde_json::from_str(l).expect("body lines are log records"))
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// Runs a script from t = 0 until `duration_ms`.
pub fn simulate(cfg: WorldConfig, script: &StickScript, duration_ms: u64) -> Result<RunLog, WorldError> {
    let mut s = Session::new(cfg)?;
    let dt = s.world.cfg.dt_ms;
    while s.clock() < duration_ms {
        let bytes = script.frame_at(s.clock(), dt).unwrap_or_default();
        s.step(&bytes);
    }
    Ok(s.finish())
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("first line is not a run log manifest: {0}")]
    MissingManifest(String),
    #[error("unsupported log version {0}")]
    Version(u32),
    #[error("config hash mismatch: log says {logged}, configuration hashes to {actual}")]
    HashMismatch { logged: String, actual: String },
    #[error("manifest cannot be re-run: {0}")]
    Unrunnable(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Pass { lines: usize },
    /// `line` is 1-based; `None` marks a missing line.
    Diverged { line: usize, logged: Option<String>, replayed: Option<String> },
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass { .. })
    }
}

pub fn parse_manifest(first_line: &str) -> Result<Manifest, ReplayError> {
    match serde_json::from_str::<Bookend>(first_line) {
        Ok(Bookend::Manifest(m)) => Ok(*m),
        Ok(Bookend::Summary(_)) => Err(ReplayError::MissingManifest("found a summary record".into())),
        Err(e) => Err(ReplayError::MissingManifest(e.to_string())),
    }
}

/// Re-executes a log's inputs and compares the result line by line.
/// With `expected`, the log must also have been produced under that
/// configuration.
pub fn replay(text: &str, expected: Option<&WorldConfig>) -> Result<Verdict, ReplayError> {
    let logged: Vec<&str> = text.lines().collect();
    let manifest = parse_manifest(logged.first().copied().unwrap_or(""))?;
    if manifest.version != LOG_VERSION {
        return Err(ReplayError::Version(manifest.version));
    }
    let actual = config_hash(&manifest.config);
    if actual != manifest.config_hash {
        return Err(ReplayError::HashMismatch { logged: manifest.config_hash, actual });
    }
    if let Some(cfg) = expected {
        let actual = config_hash(cfg);
        if actual != manifest.config_hash {
            return Err(ReplayError::HashMismatch { logged: manifest.config_hash, actual });
        }
    }
    let map = manifest.config.drive.channel_map;
    let script = lines_to_script(&manifest.inputs, &map).map_err(|e| ReplayError::Unrunnable(e.to_string()))?;
    let log = simulate(manifest.config.clone(), &script, manifest.duration_ms).map_err(|e| ReplayError::Unrunnable(e.to_string()))?;
    let replayed = log.lines();
    for i in 0..logged.len().max(replayed.len()) {
        let (a, b) = (logged.get(i).copied(), replayed.get(i).map(String::as_str));
        if a != b {
            return Ok(Verdict::Diverged { line: i + 1, logged: a.map(Into::into), replayed: b.map(Into::into) });
        }
    }
    Ok(Verdict::Pass { lines: replayed.len() })
}
