#![allow(dead_code)]

use std::path::PathBuf;

use overrow::runlog::{simulate, RunLog};
use overrow::scenario::{load_scenario, Scenario};
use overrow::trace::load_trace;
use overrow_core::field::StickScript;

pub const BUNDLED: [&str; 4] = ["flax_spray", "row_pass", "headland", "terrain_stall"];

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn bundled(name: &str) -> Scenario {
    load_scenario(&scenario_dir().join(format!("{name}.toml"))).unwrap()
}

pub fn script_for(sc: &Scenario) -> StickScript {
    match &sc.trace {
        Some(p) => load_trace(p, &sc.world.drive.channel_map, sc.world.dt_ms).unwrap(),
        None => StickScript::default(),
    }
}

pub fn run_bundled(name: &str) -> RunLog {
    let sc = bundled(name);
    simulate(sc.world.clone(), &script_for(&sc), sc.duration_ms).unwrap()
}
