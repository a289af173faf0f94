//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p overrow --test acceptance -- --nocapture`

mod common;

use std::cell::Cell;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use common::*;
use overrow::sizing::payload_sweep;
use overrow_core::crsf::*;
use overrow_core::drive::{DriveConfig, MotorDriver};
use overrow_core::field::{
    run_headland_turn, stick_channels, LogRecord, StickInput, StickScript, TraceEntry, TurnMode, World, WorldConfig,
};
use overrow_core::kinematics::{integrate_pose, BodyTwist, Pose};
use overrow_core::sprayer::{coverage_report, full_tank_endurance, step_sprayer, SprayerConfig, SprayerState};
use overrow_core::terramech::*;
use overrow_core::GRAVITY;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn runner(cases: u32) -> TestRunner {
    let cfg = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

const REFERENCE_TORQUES: [f64; 6] = [12.16, 12.42, 12.95, 14.21, 13.81, 15.55];

fn torque_table() -> Outcome {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_overrow")).args(["size", "--all", "--json"]).output().map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    if !out.status.success() {
        return Err(format!("size --all exited with {}", out.status));
    }
    let v: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let rows = v["rows"].as_array().ok_or("no rows")?;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (i, reference) in REFERENCE_TORQUES.iter().enumerate() {
        let row = rows.get(i).ok_or(format!("missing row {i}"))?;
        if row["reference_torque_nm"].as_f64() != Some(*reference) {
            return Err(format!("row {i} carries reference {}, expected {reference}", row["reference_torque_nm"]));
        }
        let got = row["required_torque_nm"].as_f64().ok_or("no torque")?;
        let dev = got / reference - 1.0;
        worst = worst.max(dev.abs());
        parts.push(format!("{} {got:.2}/{reference}", row["surface"].as_str().unwrap_or("?")));
    }
    check(
        rows.len() == 6 && worst <= 0.10 && elapsed < 1.0,
        format!("worst deviation {:.1}% (limit 10%), {elapsed:.3} s (limit 1 s); {}", worst * 100.0, parts.join(", ")),
    )
}

fn pivot_radii() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (track, want) in [(1.42, 0.71), (1.52, 0.76)] {
        let mut cfg = WorldConfig::default();
        cfg.chassis.track_width = track;
        let r = run_headland_turn(&cfg, TurnMode::Pivot).map_err(|e| e.to_string())?.circle.radius;
        ok &= (r - want).abs() <= 0.01;
        parts.push(format!("track {track} m: {r:.4} m (want {want} ± 0.01)"));
    }
    let r = run_headland_turn(&WorldConfig::default(), TurnMode::InPlace).map_err(|e| e.to_string())?.circle.radius;
    ok &= r <= 0.01;
    parts.push(format!("in place: {r:.2e} m (limit 0.01)"));
    check(ok, parts.join("; "))
}

fn endurance() -> Outcome {
    let min = full_tank_endurance(&SprayerConfig::default()) / 60.0;
    check((29.0..=32.0).contains(&min), format!("{min:.4} min (accepted 29 to 32)"))
}

fn coverage() -> Outcome {
    let cfg = SprayerConfig::default();
    let mut s = SprayerState::full(&cfg);
    let dt = 0.02;
    for _ in 0..(1800.0 / dt) as usize {
        s = step_sprayer(s, &cfg, dt, [true; 4]);
    }
    let rep = coverage_report(&s, &cfg, None);
    let dev = rep.area / 1003.35 - 1.0;
    check(
        dev.abs() <= 0.002,
        format!("{:.2} s open, {} plots, {:.2} m² vs 1003.35 ({:+.3}%, limit ±0.2%)", rep.open_time, rep.plots_sprayed, rep.area, dev * 100.0),
    )
}

fn flax_mission() -> Outcome {
    let s = run_bundled("flax_spray").summary;
    check(
        (s.open_time_s - 48.0).abs() <= 0.5 && (s.volume_gal - 0.64).abs() <= 0.02,
        format!(
            "{:.2} s open (want ≈48), {:.4} gal (want 0.64 ± 0.02), {} of {} plots",
            s.open_time_s, s.volume_gal, s.plots_sprayed, s.plots_total
        ),
    )
}

fn velocity_chain() -> Outcome {
    let peak = MotorSpec::default().peak_wheel_speed();
    let log = run_bundled("row_pass");
    let reached = log.records().find_map(|r| match r {
        LogRecord::Telemetry(t) if t.pose.x >= 2.44 => Some(t.timestamp as f64 / 1000.0),
        _ => None,
    });
    let Some(t) = reached else {
        return Err(format!("peak {peak:.4} m/s; row pass never reached 2.44 m"));
    };
    check(
        (peak - 0.85).abs() <= 0.02 && (t - 4.0).abs() <= 0.2,
        format!("peak {peak:.4} m/s (want 0.85 ± 0.02); 2.44 m at {t:.2} s (want 4.0 ± 0.2), {:.3} m/s", 2.44 / t),
    )
}

fn payload() -> Outcome {
    let sweep = payload_sweep(&ChassisConfig::default(), &MotorSpec::default(), &default_terrain_library(), 0.61, &[1.5])
        .map_err(|e| e.to_string())?;
    let kg = sweep[0].payload_kg;
    check((kg - 100.0).abs() <= 10.0, format!("{kg:.1} kg at safety factor 1.5, 0.61 m/s (want 100 ± 10)"))
}

fn crsf_round_trip() -> Outcome {
    let failures = Cell::new(0u32);
    let res = runner(100_000).run(&proptest::array::uniform16(CHANNEL_MIN..=CHANNEL_MAX), |ch| {
        let ok = encode_rc_channels(&ch)
            .ok()
            .and_then(|bytes| parse_frame(&bytes).ok().map(|(f, used)| used == bytes.len() && f.rc_channels() == Some(ch)))
            .unwrap_or(false);
        if !ok {
            failures.set(failures.get() + 1);
        }
        prop_assert!(ok);
        Ok(())
    });
    check(res.is_ok() && failures.get() == 0, format!("10^5 random frames, {} failures", failures.get()))
}

fn garbage_fuzz() -> Outcome {
    let strategy = (
        proptest::collection::vec((proptest::array::uniform16(CHANNEL_MIN..=CHANNEL_MAX), proptest::collection::vec(any::<u8>(), 0..48)), 1..24),
        1usize..64,
    );
    let decoded = Cell::new(0usize);
    let sent_total = Cell::new(0usize);
    let res = runner(5_000).run(&strategy, |(frames, chunk)| {
        let mut stream = Vec::new();
        for (ch, garbage) in &frames {
            stream.extend_from_slice(garbage);
            stream.extend(encode_rc_channels(ch).unwrap());
        }
        let mut dec = FrameDecoder::new();
        let mut got = Vec::new();
        for piece in stream.chunks(chunk) {
            dec.push(piece);
            while let Some(f) = dec.next_frame() {
                got.extend(f.rc_channels());
            }
        }
        while let Some(f) = dec.next_frame_at_end() {
            got.extend(f.rc_channels());
        }
        // every decoded channel set was sent, in order
        let mut it = frames.iter().map(|(ch, _)| ch);
        for g in &got {
            prop_assert!(it.any(|s| s == g), "decoded channels that were never sent");
        }
        decoded.set(decoded.get() + got.len());
        sent_total.set(sent_total.get() + frames.len());
        let mut link = LinkState::new(DEFAULT_FAILSAFE_MS);
        link.ingest(&stream, 0);
        prop_assert!(link.snapshot(0).channels.iter().all(|&c| (CHANNEL_MIN..=CHANNEL_MAX).contains(&c)));
        Ok(())
    });
    match res {
        Ok(()) => Ok(format!("5000 garbage streams, {} of {} frames recovered, no corrupted decodes", decoded.get(), sent_total.get())),
        Err(e) => Err(e.to_string()),
    }
}

fn caster_load_sum() -> Outcome {
    let strategy = (
        (20.0..300.0f64, 0.5..2.0f64, 0.05..0.95f64, 0.1..1.5f64, 1.0..2.0f64),
        (-200.0..200.0f64, -200.0..200.0f64, 0.0..0.4f64, -5.0..5.0f64),
    );
    let worst = Cell::new(0.0f64);
    let res = runner(10_000).run(&strategy, |((mass, wheelbase, cg_frac, cg_height, track), (fl, fr, c_rr, swivel))| {
        let chassis = ChassisConfig { mass, wheelbase, cg_to_front: cg_frac * wheelbase, cg_height, track_width: track, ..ChassisConfig::default() };
        let r = caster_analysis(&chassis, &CasterParams::default(), fl, fr, &TerrainParams::flat("t", c_rr), swivel).unwrap();
        let sum = r.casters[0].vertical_load + r.casters[1].vertical_load;
        let share = chassis.cg_to_front / wheelbase * mass * GRAVITY;
        let transfer = (r.casters[0].vertical_load - share).abs();
        // only the rounding of share ± transfer and of their sum
        let bound = 2.0 * f64::EPSILON * (2.0 * share + 2.0 * transfer);
        let err = (sum - 2.0 * share).abs();
        worst.set(worst.get().max(err / (2.0 * share)));
        prop_assert!(err <= bound, "sum {sum} vs {}", 2.0 * share);
        Ok(())
    });
    match res {
        Ok(()) => Ok(format!("10^4 chassis configs, worst relative error {:.1e} (rounding only)", worst.get())),
        Err(e) => Err(e.to_string()),
    }
}

fn circle_closure() -> Outcome {
    let strategy = (-2.0..2.0f64, prop_oneof![-2.0..-0.05f64, 0.05..2.0f64], 1usize..1000);
    let worst = Cell::new(0.0f64);
    let res = runner(2_000).run(&strategy, |(v, w, n)| {
        let twist = BodyTwist { linear: v, angular: w };
        let period = 2.0 * PI / w.abs();
        let mut p = Pose::ORIGIN;
        for _ in 0..n {
            p = integrate_pose(p, twist, period / n as f64).unwrap();
        }
        let err = p.x.hypot(p.y);
        worst.set(worst.get().max(err));
        prop_assert!(err <= 1e-9);
        Ok(())
    });
    match res {
        Ok(()) => Ok(format!("2000 circles in 1 to 999 arcs, worst closure {:.1e} m (limit 1e-9)", worst.get())),
        Err(e) => Err(e.to_string()),
    }
}

fn determinism() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for name in BUNDLED {
        let (a, b) = (run_bundled(name).sha256(), run_bundled(name).sha256());
        ok &= a == b;
        parts.push(format!("{name} {}", &a[..12]));
    }
    check(ok, parts.join(", "))
}

fn failsafe_dominance() -> Outcome {
    let sticks = (-1.0..=1.0f64, -1.0..=1.0f64, proptest::array::uniform4(any::<bool>()));
    let strategy = (sticks, 100u64..3000, proptest::collection::vec(any::<u8>(), 0..64));
    let forced = Cell::new(0u64);
    let res = runner(200).run(&strategy, |((throttle, steering, switches), drop_ms, garbage)| {
        let cfg = WorldConfig::default();
        let ch = stick_channels(&cfg.drive.channel_map, throttle, steering, switches);
        let drop_at = drop_ms / 20 * 20;
        let script = StickScript::new(vec![
            TraceEntry { t: 0, input: StickInput::Channels(ch) },
            TraceEntry { t: drop_at, input: StickInput::Raw(garbage) },
        ])
        .unwrap();
        let limit = drop_at + cfg.drive.failsafe_ms;
        let mut w = World::new(cfg).unwrap();
        let mut violations = 0;
        w.run_script(&script, limit + 2000, |_, out| {
            let now = out.telemetry.timestamp - 20;
            if now >= limit {
                forced.set(forced.get() + 1);
                if out.telemetry.link_ok || out.actions.setpoints != [0.0, 0.0] || out.actions.relays.any_on() {
                    violations += 1;
                }
            }
        });
        prop_assert_eq!(violations, 0);
        Ok(())
    });
    match res {
        Ok(()) => Ok(format!("200 scripted dropouts, {} ticks past the window all neutral with relays off", forced.get())),
        Err(e) => Err(e.to_string()),
    }
}

fn pid_settle() -> Outcome {
    let c = DriveConfig::new(MotorSpec::default(), CALIBRATED_WHEEL_RADIUS);
    let load = steady_load_per_motor(&ChassisConfig::default(), &TerrainParams::flat("soil", 0.06)).map_err(|e| e.to_string())?;
    let sp = c.to_counts(c.motor.peak_wheel_speed());
    let mut d = MotorDriver::default();
    d.set_speed(0, sp);
    let trace: Vec<f64> = (0..250)
        .map(|_| {
            d.step(&c, [load, load], 0.02);
            d.speed(0)
        })
        .collect();
    let last_out = trace.iter().rposition(|v| (v - sp).abs() > 0.02 * sp).map_or(0, |i| i + 1);
    let settle = last_out as f64 * 0.02;
    check(settle <= 1.0 && settle == 0.62, format!("settles within 2% at {settle:.2} s (limit 1.0 s, frozen 0.62 s)"))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 14] = [
        ("torque table", torque_table),
        ("pivot radii", pivot_radii),
        ("sprayer endurance", endurance),
        ("coverage", coverage),
        ("flax mission", flax_mission),
        ("velocity chain", velocity_chain),
        ("payload", payload),
        ("crsf round trip", crsf_round_trip),
        ("garbage resync", garbage_fuzz),
        ("caster load sum", caster_load_sum),
        ("circle closure", circle_closure),
        ("determinism", determinism),
        ("failsafe dominance", failsafe_dominance),
        ("pid settle", pid_settle),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                println!("FAIL {name}: {detail}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
