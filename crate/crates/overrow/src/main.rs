use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use overrow::runlog::{replay, simulate, ReplayError, Summary, Verdict};
use overrow::scenario::{load_scenario, Scenario};
use overrow::serve::{bind, ServeOptions, DEFAULT_TELEMETRY_HZ};
use overrow::sizing::{
    fit_calibration, parse_library, payload_sweep, render_rows, size_named, size_reference_table, PayloadPoint, SizeOptions,
    TerrainRow,
};
use overrow::trace::load_trace;
use overrow_core::field::StickScript;
use overrow_core::terramech::{default_terrain_library, RangePick, TerrainRecord};
use serde::Serialize;

/// Simulator and sizing toolkit for an over-the-row differential-drive sprayer.
#[derive(Parser)]
#[command(name = "overrow", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Required versus available motor torque per terrain.
    Size(SizeArgs),
    /// Run a scenario with a scripted stick trace.
    Simulate(SimulateArgs),
    /// Re-run a log's inputs and compare byte for byte.
    Replay(ReplayArgs),
    /// Drive the simulated robot over a WebSocket.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Pick {
    Min,
    Mid,
    Max,
}

#[derive(Args)]
struct SizeArgs {
    /// Scenario whose chassis and motor are sized; the stock robot otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// One terrain from the library.
    #[arg(long, conflicts_with = "all")]
    terrain: Option<String>,
    /// The six reference surfaces alongside their reference torques.
    #[arg(long)]
    all: bool,
    /// Terrain library file; the built-in table otherwise.
    #[arg(long)]
    library: Option<PathBuf>,
    /// Which end of a terrain's rolling-resistance range to use with --terrain.
    #[arg(long, value_enum, default_value = "mid")]
    pick: Pick,
    /// Payload on the average field soil across safety factors 1.0 to 2.0.
    #[arg(long)]
    payload_sweep: bool,
    /// Refit wheel radius and design acceleration to the reference torques.
    #[arg(long)]
    fit: bool,
    /// Ground speed the payload estimate must hold, m/s.
    #[arg(long, default_value_t = 0.61)]
    speed: f64,
    #[arg(long, default_value_t = 1.5)]
    safety_factor: f64,
    #[arg(long)]
    json: bool,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Stick trace (JSON lines) or link capture; overrides the scenario's trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the run log here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Simulated seconds; overrides the scenario's duration.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args)]
struct ReplayArgs {
    log: PathBuf,
    /// Also require the log to come from this scenario's configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8765")]
    listen: String,
    #[arg(long, default_value_t = DEFAULT_TELEMETRY_HZ)]
    telemetry_hz: f64,
    /// Write the session's run log here when a driver sends stop.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Advance only on step messages.
    #[arg(long)]
    lockstep: bool,
}

/// Failure with its process exit code.
struct Fail(u8, String);

const CONFIG: u8 = 2;
const DIVERGED: u8 = 3;
const RUNTIME: u8 = 1;

fn config_err(e: impl std::fmt::Display) -> Fail {
    Fail(CONFIG, e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> Fail {
    Fail(RUNTIME, e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Size(a) => cmd_size(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Replay(a) => cmd_replay(a),
        Cmd::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

fn scenario_or_default(path: Option<&Path>) -> Result<Scenario, Fail> {
    let sc = match path {
        Some(p) => load_scenario(p).map_err(config_err)?,
        None => Scenario::default(),
    };
    for w in &sc.warnings {
        eprintln!("warning: {}", serde_json::to_string(w).unwrap_or_default());
    }
    Ok(sc)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Fail> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| runtime_err(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct SizeReport {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    rows: Vec<TerrainRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    payload_sweep: Vec<PayloadPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<Fit>,
}

#[derive(Serialize)]
struct Fit {
    wheel_radius_m: f64,
    design_acceleration_mps2: f64,
}

fn cmd_size(a: SizeArgs) -> Result<(), Fail> {
    let sc = scenario_or_default(a.config.as_deref())?;
    let library: Vec<TerrainRecord> = match &a.library {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| config_err(format!("cannot read {}: {e}", p.display())))?;
            parse_library(&text).map_err(config_err)?
        }
        None => default_terrain_library(),
    };
    let (chassis, motor) = (&sc.world.chassis, &sc.world.drive.motor);
    let opts = SizeOptions {
        pick: match a.pick {
            Pick::Min => RangePick::Min,
            Pick::Mid => RangePick::Mid,
            Pick::Max => RangePick::Max,
        },
        target_speed: a.speed,
        safety_factor: a.safety_factor,
    };
    let mut report = SizeReport { rows: Vec::new(), payload_sweep: Vec::new(), fit: None };
    if let Some(name) = &a.terrain {
        report.rows.push(size_named(chassis, motor, &library, name, &opts).map_err(config_err)?);
    } else if a.all || !(a.payload_sweep || a.fit) {
        report.rows = size_reference_table(chassis, motor, &library, &opts).map_err(config_err)?;
    }
    if a.payload_sweep {
        let factors: Vec<f64> = (0..=10).map(|i| 1.0 + i as f64 / 10.0).collect();
        report.payload_sweep = payload_sweep(chassis, motor, &library, a.speed, &factors).map_err(config_err)?;
    }
    if a.fit {
        let (r, acc) = fit_calibration(chassis, &library).map_err(config_err)?;
        report.fit = Some(Fit { wheel_radius_m: r, design_acceleration_mps2: acc });
    }

    let text = if a.json {
        serde_json::to_string_pretty(&report).expect("reports serialize") + "\n"
    } else {
        let mut s = String::new();
        if !report.rows.is_empty() {
            s += &render_rows(&report.rows);
        }
        if !report.payload_sweep.is_empty() {
            s += &format!("payload of the bare platform at {:.2} m/s on the average field soil\n", a.speed);
            for p in &report.payload_sweep {
                s += &format!("  safety factor {:.1}: {:7.1} kg\n", p.safety_factor, p.payload_kg);
            }
        }
        if let Some(f) = &report.fit {
            s += &format!(
                "fitted wheel radius {:.5} m, design acceleration {:.4} m/s²\n",
                f.wheel_radius_m, f.design_acceleration_mps2
            );
        }
        s
    };
    emit(a.out.as_deref(), &text)
}

fn render_summary(s: &Summary, sha: &str) -> String {
    format!(
        "duration        {:.2} s\n\
         distance        {:.3} m (mean {:.3} m/s)\n\
         final pose      x {:.3} m, y {:.3} m, heading {:.1}°\n\
         stalls          {}\n\
         clearance       {} violation(s), {} over-height\n\
         plots sprayed   {} of {}\n\
         solenoid open   {:.2} s\n\
         volume          {:.4} L ({:.4} gal)\n\
         area            {:.2} m²\n\
         tank endurance  {:.2} min left\n\
         failsafes       {}\n\
         dry runs        {}\n\
         log sha256      {sha}\n",
        s.duration_s,
        s.distance_m,
        s.mean_speed_mps,
        s.final_pose.x,
        s.final_pose.y,
        s.final_pose.theta.to_degrees(),
        s.stalls,
        s.clearance_violations,
        s.over_height,
        s.plots_sprayed,
        s.plots_total,
        s.open_time_s,
        s.volume_l,
        s.volume_gal,
        s.area_m2,
        s.endurance_remaining_min,
        s.failsafes,
        s.dry_runs,
    )
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), Fail> {
    let sc = scenario_or_default(Some(&a.config))?;
    let cfg = sc.world;
    let script = match a.trace.as_ref().or(sc.trace.as_ref()) {
        Some(p) => load_trace(p, &cfg.drive.channel_map, cfg.dt_ms).map_err(config_err)?,
        None => StickScript::default(),
    };
    let duration_ms = match a.duration {
        Some(s) if s.is_finite() && s >= 0.0 => (s * 1000.0).round() as u64,
        Some(s) => return Err(config_err(format!("duration must be non-negative, got {s}"))),
        None => sc.duration_ms,
    };
    let log = simulate(cfg, &script, duration_ms).map_err(config_err)?;
    if let Some(out) = &a.out {
        emit(Some(out), &log.to_text())?;
    }
    print!("{}", render_summary(&log.summary, &log.sha256()));
    Ok(())
}

fn cmd_replay(a: ReplayArgs) -> Result<(), Fail> {
    let text = std::fs::read_to_string(&a.log).map_err(|e| config_err(format!("cannot read {}: {e}", a.log.display())))?;
    let expected = match &a.config {
        Some(p) => Some(load_scenario(p).map_err(config_err)?.world),
        None => None,
    };
    match replay(&text, expected.as_ref()) {
        Ok(Verdict::Pass { lines }) => {
            println!("PASS {lines} lines reproduced");
            Ok(())
        }
        Ok(Verdict::Diverged { line, logged, replayed }) => {
            println!("FAIL first divergence at line {line}");
            println!("  logged:   {}", logged.as_deref().unwrap_or("<missing>"));
            println!("  replayed: {}", replayed.as_deref().unwrap_or("<missing>"));
            Err(Fail(DIVERGED, format!("replay diverged at line {line}")))
        }
        Err(e @ ReplayError::Unrunnable(_)) => Err(runtime_err(e)),
        Err(e) => Err(config_err(e)),
    }
}

fn cmd_serve(a: ServeArgs) -> Result<(), Fail> {
    let sc = scenario_or_default(Some(&a.config))?;
    let opts = ServeOptions { listen: a.listen, telemetry_hz: a.telemetry_hz, lockstep: a.lockstep, ..Default::default() };
    let server = bind(sc.world, opts).map_err(|e| match e {
        overrow::serve::ServeError::Rate(_) => config_err(e),
        _ => runtime_err(e),
    })?;
    eprintln!("listening on ws://{}", server.local_addr());
    let report = server.run().map_err(runtime_err)?;
    eprintln!(
        "session {} stopped at {} ms, {} frames ok, {} crc errors",
        report.session, report.log.manifest.duration_ms, report.link.frames_ok, report.link.crc_errors
    );
    if let Some(out) = &a.out {
        emit(Some(out), &report.log.to_text())?;
    }
    print!("{}", render_summary(&report.log.summary, &report.log.sha256()));
    Ok(())
}
