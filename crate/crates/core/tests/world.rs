use overrow_core::crsf::ChannelMap;
use overrow_core::field::*;
use overrow_core::kinematics::Pose;
use overrow_core::terramech::{stalls, TerrainParams};
use proptest::prelude::*;

fn sticks(t: u64, throttle: f64, steering: f64, spray: bool) -> TraceEntry {
    TraceEntry { t, input: StickInput::Channels(stick_channels(&ChannelMap::default(), throttle, steering, [spray; 4])) }
}

fn mixed_script() -> StickScript {
    StickScript::new(vec![
        sticks(0, 0.0, 0.0, false),
        sticks(500, 1.0, 0.0, false),
        sticks(3000, 0.6, 0.4, true),
        TraceEntry { t: 5000, input: StickInput::Silent },
        sticks(6500, -0.5, -0.2, false),
        sticks(8000, 0.0, 1.0, true),
    ])
    .unwrap()
}

fn run(cfg: WorldConfig, script: &StickScript, until: u64) -> Vec<LogRecord> {
    let mut w = World::new(cfg).unwrap();
    let mut log = Vec::new();
    w.run_script(script, until, |_, out| log.extend(out.records()));
    log
}

#[test]
fn identical_inputs_give_identical_logs() {
    let mut cfg = WorldConfig { caster_locked: false, heading_noise: 0.05, seed: 7, ..Default::default() };
    let a = run(cfg.clone(), &mixed_script(), 10_000);
    let b = run(cfg.clone(), &mixed_script(), 10_000);
    assert_eq!(a, b);
    cfg.seed = 8;
    assert_ne!(a, run(cfg, &mixed_script(), 10_000));
}

#[test]
fn locked_casters_ignore_the_seed() {
    let mut cfg = WorldConfig { heading_noise: 0.05, ..Default::default() };
    let a = run(cfg.clone(), &mixed_script(), 10_000);
    cfg.seed = 99;
    assert_eq!(a, run(cfg, &mixed_script(), 10_000));
}

#[test]
fn one_telemetry_record_per_tick() {
    let log = run(WorldConfig::default(), &mixed_script(), 10_000);
    let stamps: Vec<u64> = log
        .iter()
        .filter_map(|r| match r {
            LogRecord::Telemetry(t) => Some(t.timestamp),
            _ => None,
        })
        .collect();
    assert_eq!(stamps.len(), 500);
    assert!(stamps.windows(2).all(|w| w[1] == w[0] + 20));
}

#[test]
fn dropout_forces_neutral_every_tick() {
    let mut w = World::new(WorldConfig::default()).unwrap();
    let script = mixed_script();
    let mut down_ticks = 0;
    w.run_script(&script, 10_000, |_, out| {
        let now = out.telemetry.timestamp - 20;
        // last frame goes out at 4980 ms
        if (5500..6500).contains(&now) {
            down_ticks += 1;
            assert!(!out.telemetry.link_ok);
            assert_eq!(out.actions.setpoints, [0.0, 0.0]);
            assert!(!out.actions.relays.any_on());
        }
        if (5000..5500).contains(&now) {
            assert!(out.telemetry.link_ok);
        }
    });
    assert_eq!(down_ticks, 50);
}

#[test]
fn ground_distance_per_step_is_bounded() {
    let cfg = WorldConfig { background: TerrainParams::flat("concrete", 0.015), ..Default::default() };
    let bound = cfg.drive.motor.no_load_wheel_speed * cfg.dt();
    let mut w = World::new(cfg).unwrap();
    let mut prev = w.robot.pose;
    w.run_script(&mixed_script(), 10_000, |w, _| {
        let p = w.robot.pose;
        assert!((p.x - prev.x).hypot(p.y - prev.y) <= bound);
        prev = p;
    });
}

#[test]
fn stall_events_follow_torque_and_duty() {
    let mut cfg = WorldConfig::default();
    cfg.chassis.mass = 200.0;
    cfg.background = TerrainParams::new("steep soil", 0.06, 10f64.to_radians());
    let motor = cfg.drive.motor;
    let mut w = World::new(cfg).unwrap();
    let mut stalled = [false; 2];
    let mut starts = 0;
    w.run_script(&mixed_script(), 10_000, |w, out| {
        for (m, was_stalled) in stalled.iter().enumerate() {
            let duty = w.robot.drive.driver.channels[m].duty;
            assert_eq!(out.actions.stalled[m], stalls(&motor, out.load, duty));
            let started = out.events.iter().any(|e| e.kind == EventKind::StallStart { motor: m as u8, load: out.load, duty });
            assert_eq!(started, out.actions.stalled[m] && !was_stalled);
            starts += started as u32;
        }
        stalled = out.actions.stalled;
    });
    assert!(starts > 0);
}

#[test]
fn row_pass_with_field_slip() {
    let mut cfg = WorldConfig::default();
    cfg.background = cfg.background.with_slip(0.72);
    let script = StickScript::new(vec![sticks(0, 1.0, 0.0, false)]).unwrap();
    let mut w = World::new(cfg).unwrap();
    let mut reached = None;
    w.run_script(&script, 6000, |w, out| {
        if reached.is_none() && w.robot.pose.x >= 2.44 {
            reached = Some(out.telemetry.timestamp);
        }
    });
    assert_eq!(reached, Some(4000));
    assert!((w.robot.wheel_speeds.left - 0.612).abs() < 1e-9);
}

#[test]
fn empty_trace_stays_still() {
    let script = StickScript::new(vec![]).unwrap();
    let mut w = World::new(WorldConfig::default()).unwrap();
    w.run_script(&script, 3000, |_, out| {
        assert!(out.events.is_empty());
        assert_eq!(out.actions.setpoints, [0.0, 0.0]);
    });
    assert_eq!(w.robot.pose, Pose::ORIGIN);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn pivot_radius_is_half_track(track in 1.42..1.57f64) {
        let mut cfg = WorldConfig::default();
        cfg.chassis.track_width = track;
        let r = run_headland_turn(&cfg, TurnMode::Pivot).unwrap();
        prop_assert!((r.circle.radius - track / 2.0).abs() < 1e-6);
    }
}

fn delivery() -> impl Strategy<Value = Vec<u8>> {
    prop_oneof![
        Just(Vec::new()),
        proptest::array::uniform16(172u16..=1811).prop_map(|ch| overrow_core::crsf::encode_rc_channels(&ch).unwrap()),
        Just(overrow_core::crsf::encode_rc_channels(&[992; 16]).unwrap()),
        proptest::collection::vec(any::<u8>(), 1..40),
    ]
}

proptest! {
    #[test]
    fn recorded_inputs_replay_exactly(ticks in proptest::collection::vec(delivery(), 0..80)) {
        let mut rec = InputRecorder::new();
        for (k, bytes) in ticks.iter().enumerate() {
            rec.record(k as u64 * 20, bytes);
        }
        let script = StickScript::new(rec.finish()).unwrap();
        for (k, bytes) in ticks.iter().enumerate() {
            let got = script.frame_at(k as u64 * 20, 20).unwrap_or_default();
            prop_assert_eq!(&got, bytes);
        }
    }
}
