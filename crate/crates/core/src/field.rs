//! World model and fixed-step simulation: field layout, terrain-loaded
//! locomotion with stall, spraying, clearance checks and event detection.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_core::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::crsf::{encode_rc_channels, raw_from_command, ChannelMap, LinkState, CHANNEL_MAX, CHANNEL_MID, CHANNEL_MIN, NUM_CHANNELS};
use crate::drive::{control_tick, DriveConfig, DriveState, TelemetryRecord, TickActions};
use crate::error::ParamError;
use crate::geometry::{fit_circle, segment_crosses, Circle, FitError, Polygon, PolygonError, Vec2};
use crate::kinematics::{body_twist, integrate_pose, Pose, WheelSpeeds, EPSILON};
use crate::math::{cos, sin};
use crate::sprayer::{step_sprayer, CoverageMode, SprayRecord, SprayerConfig, SprayerState};
use crate::terramech::{steady_load_per_motor, ChassisConfig, MotorSpec, TerrainParams};

/// Parallel crop rows. Row `i` starts at `origin` shifted `i·row_spacing`
/// to the left of `heading` and runs `length` meters along it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSet {
    pub origin: Vec2,
    pub heading: f64,
    pub length: f64,
    pub row_spacing: f64,
    pub n_rows: u32,
    pub n_rows_per_plot_group: u32,
}

impl RowSet {
    pub fn row(&self, i: u32) -> (Vec2, Vec2) {
        let (s, c) = (sin(self.heading), cos(self.heading));
        let off = i as f64 * self.row_spacing;
        let a = Vec2::new(self.origin.x - off * s, self.origin.y + off * c);
        (a, Vec2::new(a.x + self.length * c, a.y + self.length * s))
    }

    /// Free space on each side of a wheel running midway between two rows.
    pub fn clearance_margin(&self, wheel_width: f64) -> f64 {
        (self.row_spacing - wheel_width) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plot {
    pub polygon: Polygon,
    pub crop: String,
    /// m
    pub crop_height: f64,
}

impl Plot {
    pub fn area(&self) -> f64 {
        self.polygon.area()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainPatch {
    pub polygon: Polygon,
    pub terrain: TerrainParams,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldLayout {
    pub rows: Vec<RowSet>,
    pub plots: Vec<Plot>,
    pub terrain_patches: Vec<TerrainPatch>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LayoutError {
    #[error("row set {index}: {source}")]
    Rows { index: usize, source: ParamError },
    #[error("plot {index}: {source}")]
    PlotPolygon { index: usize, source: PolygonError },
    #[error("plot {index}: {source}")]
    PlotHeight { index: usize, source: ParamError },
    #[error("terrain patch {index}: {source}")]
    PatchPolygon { index: usize, source: PolygonError },
    #[error("terrain patch {index}: {source}")]
    PatchTerrain { index: usize, source: ParamError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "warning", rename_all = "snake_case")]
pub enum LayoutWarning {
    /// A wheel cannot fit between two rows of this set.
    RowSpacingBelowWheelWidth { row_set: usize, row_spacing: f64, wheel_width: f64 },
}

impl FieldLayout {
    /// Every structural problem in the layout, plus geometry warnings that
    /// do not prevent loading.
    pub fn validate(&self, chassis: &ChassisConfig) -> (Vec<LayoutError>, Vec<LayoutWarning>) {
        let mut errs = Vec::new();
        let mut warns = Vec::new();
        for (index, r) in self.rows.iter().enumerate() {
            let checks = [
                crate::error::positive("row_spacing", r.row_spacing),
                crate::error::positive("length", r.length),
                crate::error::positive("n_rows", r.n_rows as f64),
            ];
            for c in checks {
                if let Err(source) = c {
                    errs.push(LayoutError::Rows { index, source });
                }
            }
            if !(r.origin.is_finite() && r.heading.is_finite()) {
                errs.push(LayoutError::Rows { index, source: ParamError::NotFinite { name: "origin" } });
            }
            if r.row_spacing > 0.0 && r.row_spacing < chassis.wheel_width {
                warns.push(LayoutWarning::RowSpacingBelowWheelWidth {
                    row_set: index,
                    row_spacing: r.row_spacing,
                    wheel_width: chassis.wheel_width,
                });
            }
        }
        for (index, p) in self.plots.iter().enumerate() {
            if let Err(source) = p.polygon.validate() {
                errs.push(LayoutError::PlotPolygon { index, source });
            }
            if let Err(source) = crate::error::non_negative("crop_height", p.crop_height) {
                errs.push(LayoutError::PlotHeight { index, source });
            }
        }
        for (index, t) in self.terrain_patches.iter().enumerate() {
            if let Err(source) = t.polygon.validate() {
                errs.push(LayoutError::PatchPolygon { index, source });
            }
            if let Err(source) = t.terrain.validate() {
                errs.push(LayoutError::PatchTerrain { index, source });
            }
        }
        (errs, warns)
    }

    /// Terrain under a point; later patches take precedence.
    pub fn terrain_at<'a>(&'a self, p: Vec2, background: &'a TerrainParams) -> &'a TerrainParams {
        self.terrain_patches.iter().rev().find(|t| t.polygon.contains(p)).map_or(background, |t| &t.terrain)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub chassis: ChassisConfig,
    pub drive: DriveConfig,
    pub sprayer: SprayerConfig,
    pub layout: FieldLayout,
    /// Terrain wherever no patch applies.
    pub background: TerrainParams,
    pub start: Pose,
    pub dt_ms: u64,
    pub seed: u64,
    pub caster_locked: bool,
    /// Amplitude of the random yaw-rate disturbance with casters unlocked, rad/s.
    pub heading_noise: f64,
}

pub const DEFAULT_DT_MS: u64 = 20;
pub const MAX_DT_MS: u64 = 100;

impl WorldConfig {
    pub fn new(chassis: ChassisConfig, motor: MotorSpec) -> Self {
        Self {
            drive: DriveConfig::new(motor, chassis.wheel_radius),
            chassis,
            sprayer: SprayerConfig::default(),
            layout: FieldLayout::default(),
            background: TerrainParams::flat("Soil (Medium-Hard)", 0.06),
            start: Pose::ORIGIN,
            dt_ms: DEFAULT_DT_MS,
            seed: 0,
            caster_locked: true,
            heading_noise: 0.0,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt_ms as f64 / 1000.0
    }
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self::new(ChassisConfig::default(), MotorSpec::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    StallStart { motor: u8, load: f64, duty: f64 },
    StallEnd { motor: u8 },
    ClearanceViolation { wheel: Side, row_set: u32, row: u32 },
    ClearanceRestored { wheel: Side, row_set: u32, row: u32 },
    OverHeight { plot: u32, crop_height: f64 },
    PlotEntered { plot: u32 },
    PlotExited { plot: u32 },
    PlotSprayed { plot: u32 },
    FailsafeEngaged,
    LinkRestored,
    DryRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// ms
    pub t: u64,
    pub x: f64,
    pub y: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// One line of a run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Telemetry(TelemetryRecord),
    Spray(SprayRecord),
    Event(Event),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose,
    /// Ground speeds after slip, m/s.
    pub wheel_speeds: WheelSpeeds,
    pub drive: DriveState,
    pub sprayer: SprayerState,
    pub stalled: [bool; 2],
    /// ms
    pub clock: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub actions: TickActions,
    pub telemetry: TelemetryRecord,
    pub spray: Option<SprayRecord>,
    pub events: Vec<Event>,
    /// Per-motor load torque applied this step, N·m.
    pub load: f64,
}

impl StepOutput {
    /// Records in log order: telemetry, spray, then events.
    pub fn records(&self) -> impl Iterator<Item = LogRecord> + '_ {
        core::iter::once(LogRecord::Telemetry(self.telemetry))
            .chain(self.spray.map(LogRecord::Spray))
            .chain(self.events.iter().cloned().map(LogRecord::Event))
    }
}

#[derive(Debug, Clone)]
struct Tracking {
    inside: Vec<bool>,
    plot_open_ms: Vec<u64>,
    sprayed: Vec<bool>,
    over_height: Vec<bool>,
    /// Per row set, per row, per wheel.
    violating: Vec<Vec<[bool; 2]>>,
    link_down: bool,
    dry: bool,
    solenoid_mask: u8,
}

#[derive(Debug, Clone)]
pub struct World {
    pub cfg: WorldConfig,
    pub robot: RobotState,
    pub link: LinkState,
    pub warnings: Vec<LayoutWarning>,
    rng: ChaCha8Rng,
    tracking: Tracking,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorldError {
    #[error("{0} invalid parameter(s): {1:?}")]
    Params(usize, Vec<ParamError>),
    #[error("{0} layout error(s): {1:?}")]
    Layout(usize, Vec<LayoutError>),
}

impl World {
    /// Builds a world, rejecting invalid parameters and layouts. Geometry
    /// warnings are kept on [`World::warnings`].
    pub fn new(cfg: WorldConfig) -> Result<Self, WorldError> {
        let mut params = cfg.chassis.validate();
        params.extend(cfg.drive.motor.validate());
        if let Err(e) = cfg.drive.gains.validate() {
            params.push(e);
        }
        params.extend(cfg.sprayer.validate());
        if let Err(e) = cfg.background.validate() {
            params.push(e);
        }
        if cfg.dt_ms == 0 || cfg.dt_ms > MAX_DT_MS {
            params.push(ParamError::OutOfRange { name: "dt", value: cfg.dt(), min: 0.001, max: MAX_DT_MS as f64 / 1000.0 });
        }
        if !cfg.start.is_finite() {
            params.push(ParamError::NotFinite { name: "start" });
        }
        if !(cfg.heading_noise.is_finite() && cfg.heading_noise >= 0.0) {
            params.push(ParamError::Negative { name: "heading_noise", value: cfg.heading_noise });
        }
        if !params.is_empty() {
            return Err(WorldError::Params(params.len(), params));
        }
        let (errs, warnings) = cfg.layout.validate(&cfg.chassis);
        if !errs.is_empty() {
            return Err(WorldError::Layout(errs.len(), errs));
        }
        let n_plots = cfg.layout.plots.len();
        let tracking = Tracking {
            inside: alloc::vec![false; n_plots],
            plot_open_ms: alloc::vec![0; n_plots],
            sprayed: alloc::vec![false; n_plots],
            over_height: alloc::vec![false; n_plots],
            violating: cfg.layout.rows.iter().map(|r| alloc::vec![[false; 2]; r.n_rows as usize]).collect(),
            link_down: true,
            dry: false,
            solenoid_mask: 0,
        };
        let robot = RobotState {
            pose: Pose::new(cfg.start.x, cfg.start.y, cfg.start.theta),
            wheel_speeds: WheelSpeeds::default(),
            drive: DriveState::default(),
            sprayer: SprayerState::full(&cfg.sprayer),
            stalled: [false; 2],
            clock: 0,
        };
        let mut world = Self {
            link: LinkState::new(cfg.drive.failsafe_ms),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            robot,
            warnings,
            tracking,
            cfg,
        };
        world.refresh_geometry(&mut Vec::new());
        Ok(world)
    }

    pub fn plots_sprayed(&self) -> u64 {
        self.tracking.sprayed.iter().filter(|&&s| s).count() as u64
    }

    pub fn sprayed_plots(&self) -> &[bool] {
        &self.tracking.sprayed
    }

    pub fn terrain_here(&self) -> &TerrainParams {
        let p = self.robot.pose;
        self.cfg.layout.terrain_at(Vec2::new(p.x, p.y), &self.cfg.background)
    }

    /// Per-motor torque needed to hold speed on the terrain under the robot.
    pub fn load_here(&self) -> f64 {
        steady_load_per_motor(&self.cfg.chassis, self.terrain_here()).unwrap_or(0.0)
    }

    /// Advances the world by one tick. `uplink` holds the link bytes that
    /// arrived since the previous tick.
    pub fn step(&mut self, uplink: &[u8]) -> StepOutput {
        let dt_ms = self.cfg.dt_ms;
        let dt = self.cfg.dt();
        let now = self.robot.clock;
        let then = now + dt_ms;
        let mut events = Vec::new();

        self.link.ingest(uplink, now);
        let inputs = self.link.snapshot(now);
        if inputs.link_ok == self.tracking.link_down {
            self.tracking.link_down = !inputs.link_ok;
            let kind = if inputs.link_ok { EventKind::LinkRestored } else { EventKind::FailsafeEngaged };
            events.push(self.event(now, kind));
        }

        let terrain = self.terrain_here().clone();
        let load = steady_load_per_motor(&self.cfg.chassis, &terrain).unwrap_or(0.0);
        let actions = control_tick(&inputs, &mut self.robot.drive, &self.cfg.drive, [load; 2], then, dt);

        for (i, &stalled) in actions.stalled.iter().enumerate() {
            if stalled != self.robot.stalled[i] {
                let kind = if stalled {
                    EventKind::StallStart { motor: i as u8, load, duty: self.robot.drive.driver.channels[i].duty }
                } else {
                    EventKind::StallEnd { motor: i as u8 }
                };
                events.push(self.event(now, kind));
            }
        }
        self.robot.stalled = actions.stalled;

        let ch = &self.robot.drive.driver.channels;
        let wheels = WheelSpeeds::new(
            self.cfg.drive.to_meters(ch[0].measured_speed) * terrain.slip_factor,
            self.cfg.drive.to_meters(ch[1].measured_speed) * terrain.slip_factor,
        );
        self.robot.wheel_speeds = wheels;
        let mut twist = body_twist(wheels, self.cfg.chassis.track_width).unwrap_or_default();
        if !self.cfg.caster_locked && self.cfg.heading_noise > 0.0 && twist.linear.abs() > EPSILON {
            let u = (self.rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
            twist.angular += self.cfg.heading_noise * (2.0 * u - 1.0);
        }
        self.robot.pose = integrate_pose(self.robot.pose, twist, dt).unwrap_or(self.robot.pose);

        let before = self.robot.sprayer;
        self.robot.sprayer = step_sprayer(before, &self.cfg.sprayer, dt, actions.relays.0);
        let mask = actions.relays.mask();
        let dispensed = self.robot.sprayer.cumulative_volume - before.cumulative_volume;
        let spray = (mask != 0 || self.tracking.solenoid_mask != 0).then(|| SprayRecord {
            t: then,
            solenoid_mask: mask,
            flow: dispensed / dt,
            tank_level: self.robot.sprayer.tank_level,
        });
        self.tracking.solenoid_mask = mask;
        self.robot.clock = then;

        if self.robot.sprayer.dry_run && !self.tracking.dry {
            events.push(self.event(then, EventKind::DryRun));
        }
        self.tracking.dry = self.robot.sprayer.dry_run;

        let spraying = dispensed > 0.0;
        self.refresh_geometry(&mut events);
        self.update_plot_spraying(spraying, &mut events);

        let mut telemetry = actions.telemetry;
        telemetry.pose = self.robot.pose;
        StepOutput { actions, telemetry, spray, events, load }
    }

    fn event(&self, t: u64, kind: EventKind) -> Event {
        Event { t, x: self.robot.pose.x, y: self.robot.pose.y, kind }
    }

    /// Body-frame rectangle placed at the current pose.
    fn body_rect(&self, back: f64, front: f64, right: f64, left: f64) -> Polygon {
        let p = self.robot.pose;
        Polygon::new(
            [(back, right), (front, right), (front, left), (back, left)]
                .iter()
                .map(|&(f, l)| p.to_world(f, l).into())
                .collect(),
        )
    }

    pub fn chassis_footprint(&self) -> Polygon {
        let b = self.cfg.chassis.half_track();
        self.body_rect(-self.cfg.chassis.wheelbase, 0.0, -b, b)
    }

    pub fn boom_footprint(&self) -> Polygon {
        let s = &self.cfg.sprayer;
        let (d, w) = (s.boom_depth / 2.0, s.boom_width / 2.0);
        self.body_rect(s.boom_offset - d, s.boom_offset + d, -w, w)
    }

    /// Wheel footprints as lines across each driven wheel's contact.
    pub fn wheel_footprints(&self) -> [(Vec2, Vec2); 2] {
        let p = self.robot.pose;
        let b = self.cfg.chassis.half_track();
        let hw = self.cfg.chassis.wheel_width / 2.0;
        let seg = |center: f64| -> (Vec2, Vec2) { (p.to_world(0.0, center - hw).into(), p.to_world(0.0, center + hw).into()) };
        [seg(b), seg(-b)]
    }

    fn refresh_geometry(&mut self, events: &mut Vec<Event>) {
        let t = self.robot.clock;
        let wheels = self.wheel_footprints();
        let sides = [Side::Left, Side::Right];
        for (si, set) in self.cfg.layout.rows.iter().enumerate() {
            for ri in 0..set.n_rows {
                let (a, b) = set.row(ri);
                for (wi, &(p, q)) in wheels.iter().enumerate() {
                    let hit = segment_crosses(p, q, a, b);
                    let was = &mut self.tracking.violating[si][ri as usize][wi];
                    if hit != *was {
                        *was = hit;
                        let (row_set, row, wheel) = (si as u32, ri, sides[wi]);
                        let kind = if hit {
                            EventKind::ClearanceViolation { wheel, row_set, row }
                        } else {
                            EventKind::ClearanceRestored { wheel, row_set, row }
                        };
                        events.push(Event { t, x: self.robot.pose.x, y: self.robot.pose.y, kind });
                    }
                }
            }
        }

        let here = Vec2::new(self.robot.pose.x, self.robot.pose.y);
        let chassis = self.chassis_footprint();
        let clearance = self.cfg.chassis.clearance;
        for (i, plot) in self.cfg.layout.plots.iter().enumerate() {
            let inside = plot.polygon.contains(here);
            if inside != self.tracking.inside[i] {
                self.tracking.inside[i] = inside;
                let kind = if inside { EventKind::PlotEntered { plot: i as u32 } } else { EventKind::PlotExited { plot: i as u32 } };
                events.push(Event { t, x: here.x, y: here.y, kind });
            }
            let over = plot.crop_height >= clearance && chassis.overlaps(&plot.polygon);
            if over && !self.tracking.over_height[i] {
                let kind = EventKind::OverHeight { plot: i as u32, crop_height: plot.crop_height };
                events.push(Event { t, x: here.x, y: here.y, kind });
            }
            self.tracking.over_height[i] = over;
        }
    }

    fn update_plot_spraying(&mut self, spraying: bool, events: &mut Vec<Event>) {
        if !spraying {
            return;
        }
        let boom = self.boom_footprint();
        let needed_ms = crate::math::round(self.cfg.sprayer.plot_spray_time * 1000.0) as u64;
        for (i, plot) in self.cfg.layout.plots.iter().enumerate() {
            if self.tracking.sprayed[i] || !boom.overlaps(&plot.polygon) {
                continue;
            }
            self.tracking.plot_open_ms[i] += self.cfg.dt_ms;
            let done = match self.cfg.sprayer.coverage_mode {
                CoverageMode::Geometric => true,
                CoverageMode::Time => self.tracking.plot_open_ms[i] >= needed_ms,
            };
            if done {
                self.tracking.sprayed[i] = true;
                let kind = EventKind::PlotSprayed { plot: i as u32 };
                events.push(Event { t: self.robot.clock, x: self.robot.pose.x, y: self.robot.pose.y, kind });
            }
        }
    }

    /// Runs a stick script until `until_ms`, handing every step to `sink`.
    pub fn run_script(&mut self, script: &StickScript, until_ms: u64, mut sink: impl FnMut(&World, &StepOutput)) {
        while self.robot.clock < until_ms {
            let bytes = script.frame_at(self.robot.clock, self.cfg.dt_ms);
            let out = self.step(bytes.as_deref().unwrap_or(&[]));
            sink(self, &out);
        }
    }
}

/// Transmitter state from one instant of a script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StickInput {
    /// Held and sent as one RC channels frame every tick.
    Channels([u16; NUM_CHANNELS]),
    /// The transmitter sends nothing.
    Silent,
    /// Bytes delivered once, on the first tick at or after the entry time.
    Raw(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// ms
    pub t: u64,
    pub input: StickInput,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("entry {index}: time {t} ms is earlier than the entry before it")]
    OutOfOrder { index: usize, t: u64 },
    #[error("entry {index}: channel {channel} value {value} outside {CHANNEL_MIN}..={CHANNEL_MAX}")]
    ChannelRange { index: usize, channel: usize, value: u16 },
}

/// Sample-and-hold stick script: the latest entry at or before the current
/// tick decides what is transmitted.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StickScript {
    entries: Vec<TraceEntry>,
}

impl StickScript {
    /// Validates ordering and channel ranges, reporting every problem.
    pub fn new(entries: Vec<TraceEntry>) -> Result<Self, Vec<TraceError>> {
        let mut errs = Vec::new();
        for (index, e) in entries.iter().enumerate() {
            if index > 0 && e.t < entries[index - 1].t {
                errs.push(TraceError::OutOfOrder { index, t: e.t });
            }
            if let StickInput::Channels(ch) = &e.input {
                for (channel, &value) in ch.iter().enumerate() {
                    if !(CHANNEL_MIN..=CHANNEL_MAX).contains(&value) {
                        errs.push(TraceError::ChannelRange { index, channel, value });
                    }
                }
            }
        }
        if errs.is_empty() {
            Ok(Self { entries })
        } else {
            Err(errs)
        }
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<TraceEntry> {
        self.entries
    }

    pub fn last_time(&self) -> u64 {
        self.entries.last().map_or(0, |e| e.t)
    }

    fn active(&self, t: u64) -> Option<&TraceEntry> {
        let idx = self.entries.partition_point(|e| e.t <= t);
        idx.checked_sub(1).map(|i| &self.entries[i])
    }

    pub fn input_at(&self, t: u64) -> &StickInput {
        self.active(t).map_or(&StickInput::Silent, |e| &e.input)
    }

    /// Link bytes to deliver on the tick starting at `t`, if any.
    pub fn frame_at(&self, t: u64, dt_ms: u64) -> Option<Vec<u8>> {
        let entry = self.active(t)?;
        match &entry.input {
            StickInput::Channels(ch) => encode_rc_channels(ch).ok(),
            StickInput::Silent => None,
            StickInput::Raw(bytes) => (entry.t + dt_ms > t).then(|| bytes.clone()),
        }
    }
}

/// Builds the shortest script that reproduces a sequence of per-tick
/// deliveries under [`StickScript::frame_at`].
///
/// A tick carrying exactly one canonical RC channels frame becomes a held
/// `Channels` entry; anything else non-empty is kept verbatim as `Raw`.
#[derive(Debug, Clone, Default)]
pub struct InputRecorder {
    entries: Vec<TraceEntry>,
    held: Option<[u16; NUM_CHANNELS]>,
}

impl InputRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, t: u64, bytes: &[u8]) {
        let input = classify_delivery(bytes);
        let changed = match &input {
            StickInput::Silent => self.held.is_some(),
            StickInput::Channels(ch) => self.held != Some(*ch),
            StickInput::Raw(_) => true,
        };
        if changed {
            self.held = match &input {
                StickInput::Channels(ch) => Some(*ch),
                _ => None,
            };
            self.entries.push(TraceEntry { t, input });
        }
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn finish(self) -> Vec<TraceEntry> {
        self.entries
    }
}

fn classify_delivery(bytes: &[u8]) -> StickInput {
    if bytes.is_empty() {
        return StickInput::Silent;
    }
    if let Ok((frame, used)) = crate::crsf::parse_frame(bytes) {
        if let Some(ch) = frame.rc_channels() {
            if used == bytes.len() && encode_rc_channels(&ch).ok().as_deref() == Some(bytes) {
                return StickInput::Channels(ch);
            }
        }
    }
    StickInput::Raw(bytes.to_vec())
}

/// Raw channel values for normalized sticks and switch positions.
pub fn stick_channels(map: &ChannelMap, throttle: f64, steering: f64, switches: [bool; 4]) -> [u16; NUM_CHANNELS] {
    let mut ch = [CHANNEL_MID; NUM_CHANNELS];
    for &s in &map.switches {
        ch[s] = CHANNEL_MIN;
    }
    ch[map.throttle] = raw_from_command(throttle);
    ch[map.steering] = raw_from_command(steering);
    for (&s, on) in map.switches.iter().zip(switches) {
        ch[s] = if on { CHANNEL_MAX } else { CHANNEL_MIN };
    }
    ch
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnMode {
    /// One wheel held still.
    Pivot,
    /// Wheels driven in opposite directions.
    InPlace,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TurnError {
    #[error("world: {0}")]
    World(#[from] WorldError),
    #[error("turned only {turned:.3} rad before the time limit")]
    Incomplete { turned: f64 },
    #[error("circle fit: {0}")]
    Fit(#[from] FitError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnResult {
    pub circle: Circle,
    pub samples: usize,
    /// Time for the measured revolution, s.
    pub duration: f64,
}

/// Time allowed for the turn to reach steady speed before logging starts.
pub const TURN_SETTLE_MS: u64 = 2000;
pub const TURN_LIMIT_MS: u64 = 120_000;

/// Drives a headland turn with scripted sticks and fits a circle to the
/// axle-midpoint trace over one full revolution after settling.
pub fn run_headland_turn(cfg: &WorldConfig, mode: TurnMode) -> Result<TurnResult, TurnError> {
    let mut world = World::new(cfg.clone())?;
    let (throttle, steering) = match mode {
        TurnMode::Pivot => (0.5, 0.5),
        TurnMode::InPlace => (0.0, 1.0),
    };
    let ch = stick_channels(&cfg.drive.channel_map, throttle, steering, [false; 4]);
    let frame = encode_rc_channels(&ch).unwrap_or_default();

    let mut points = Vec::new();
    let mut turned = 0.0;
    let mut prev_theta = world.robot.pose.theta;
    let mut start_ms = None;
    while world.robot.clock < TURN_LIMIT_MS {
        world.step(&frame);
        let p = world.robot.pose;
        if world.robot.clock <= TURN_SETTLE_MS {
            prev_theta = p.theta;
            continue;
        }
        start_ms.get_or_insert(world.robot.clock);
        turned += crate::math::wrap_angle(p.theta - prev_theta).abs();
        prev_theta = p.theta;
        points.push(Vec2::new(p.x, p.y));
        if turned >= 2.0 * PI {
            let circle = fit_circle(&points)?;
            let duration = (world.robot.clock - start_ms.unwrap_or(0)) as f64 / 1000.0;
            return Ok(TurnResult { circle, samples: points.len(), duration });
        }
    }
    Err(TurnError::Incomplete { turned })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rows_at(laterals: &[f64], spacing: f64) -> RowSet {
        RowSet {
            origin: Vec2::new(-5.0, laterals[0]),
            heading: 0.0,
            length: 20.0,
            row_spacing: spacing,
            n_rows: laterals.len() as u32,
            n_rows_per_plot_group: laterals.len() as u32,
        }
    }

    fn violations(out: &StepOutput) -> usize {
        out.events.iter().filter(|e| matches!(e.kind, EventKind::ClearanceViolation { .. })).count()
    }

    #[test]
    fn empty_field_is_valid() {
        let w = World::new(WorldConfig::default()).unwrap();
        assert!(w.warnings.is_empty());
    }

    #[test]
    fn flax_spacing_margin() {
        let rows = rows_at(&[-0.92, -0.46, 0.0, 0.46, 0.92], 0.46);
        assert!((rows.clearance_margin(0.36) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn narrow_rows_warn_but_load() {
        let mut cfg = WorldConfig::default();
        cfg.layout.rows.push(rows_at(&[0.0, 0.3], 0.3));
        let w = World::new(cfg).unwrap();
        assert_eq!(w.warnings.len(), 1);
    }

    #[test]
    fn invalid_layout_lists_every_problem() {
        let mut cfg = WorldConfig::default();
        let mut r = rows_at(&[0.0], 0.46);
        r.row_spacing = 0.0;
        r.length = -1.0;
        cfg.layout.rows.push(r);
        cfg.layout.plots.push(Plot { polygon: Polygon::new(vec![]), crop: "flax".into(), crop_height: -1.0 });
        match World::new(cfg) {
            Err(WorldError::Layout(n, _)) => assert_eq!(n, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn centered_straddle_has_no_violations() {
        let mut cfg = WorldConfig::default();
        cfg.layout.rows.push(rows_at(&[-0.92, -0.46, 0.0, 0.46, 0.92], 0.46));
        let mut w = World::new(cfg).unwrap();
        let frame = encode_rc_channels(&stick_channels(&ChannelMap::default(), 1.0, 0.0, [false; 4])).unwrap();
        let mut total = 0;
        for _ in 0..500 {
            total += violations(&w.step(&frame));
        }
        assert!(w.robot.pose.x > 5.0);
        assert_eq!(total, 0);
    }

    #[test]
    fn offset_past_margin_violates() {
        // rows at ±0.48 and ±0.94 leave 0.05 m either side of each wheel
        let mut cfg = WorldConfig::default();
        let set = rows_at(&[0.0], 0.46);
        cfg.layout.rows = [-0.94, -0.48, 0.48, 0.94].map(|y| RowSet { origin: Vec2::new(-5.0, y), ..set.clone() }).to_vec();
        let count = |w: &World| w.tracking.violating.iter().flatten().flatten().filter(|&&v| v).count();
        cfg.start = Pose::new(0.0, 0.04, 0.0);
        assert_eq!(count(&World::new(cfg.clone()).unwrap()), 0);
        cfg.start = Pose::new(0.0, 0.06, 0.0);
        let w = World::new(cfg).unwrap();
        // one wheel reaches its outer row, the other its inner row
        assert_eq!(count(&w), 2);
        assert!(w.tracking.violating[3][0][0] && w.tracking.violating[1][0][1]);
    }

    #[test]
    fn tall_crop_flags_over_height() {
        let mut cfg = WorldConfig::default();
        cfg.layout.plots.push(Plot { polygon: Polygon::rect(-1.0, -0.6, 0.5, 1.2), crop: "maize".into(), crop_height: 0.95 });
        cfg.layout.plots.push(Plot { polygon: Polygon::rect(-1.0, -0.6, 0.5, 1.2), crop: "flax".into(), crop_height: 0.9 });
        let mut w = World::new(cfg).unwrap();
        let out = w.step(&[]);
        assert!(w.tracking.over_height[0] && !w.tracking.over_height[1]);
        assert!(out.events.is_empty());
    }

    #[test]
    fn silence_engages_failsafe() {
        let mut w = World::new(WorldConfig::default()).unwrap();
        let frame = encode_rc_channels(&stick_channels(&ChannelMap::default(), 1.0, 0.0, [true; 4])).unwrap();
        let first = w.step(&frame);
        assert!(first.events.iter().any(|e| e.kind == EventKind::LinkRestored));
        for _ in 0..100 {
            w.step(&frame);
        }
        let mut engaged_at = None;
        for _ in 0..40 {
            let out = w.step(&[]);
            if let Some(e) = out.events.iter().find(|e| e.kind == EventKind::FailsafeEngaged) {
                engaged_at = Some(e.t);
                assert_eq!(out.actions.setpoints, [0.0, 0.0]);
                assert!(!out.actions.relays.any_on());
            }
        }
        // last frame at 2000 ms, stale once more than 500 ms have passed
        assert_eq!(engaged_at, Some(2520));
    }

    #[test]
    fn script_sample_and_hold() {
        let a = stick_channels(&ChannelMap::default(), 0.5, 0.0, [false; 4]);
        let s = StickScript::new(vec![
            TraceEntry { t: 100, input: StickInput::Channels(a) },
            TraceEntry { t: 300, input: StickInput::Silent },
        ])
        .unwrap();
        assert_eq!(s.input_at(0), &StickInput::Silent);
        assert_eq!(s.input_at(100), &StickInput::Channels(a));
        assert_eq!(s.input_at(299), &StickInput::Channels(a));
        assert_eq!(s.input_at(300), &StickInput::Silent);
    }

    #[test]
    fn raw_entries_fire_once() {
        let s = StickScript::new(vec![TraceEntry { t: 40, input: StickInput::Raw(vec![1, 2, 3]) }]).unwrap();
        assert_eq!(s.frame_at(20, 20), None);
        assert_eq!(s.frame_at(40, 20), Some(vec![1, 2, 3]));
        assert_eq!(s.frame_at(60, 20), None);
    }

    #[test]
    fn script_rejects_bad_entries() {
        let mut bad = [CHANNEL_MID; NUM_CHANNELS];
        bad[2] = 100;
        let errs = StickScript::new(vec![
            TraceEntry { t: 100, input: StickInput::Channels(bad) },
            TraceEntry { t: 50, input: StickInput::Silent },
        ])
        .unwrap_err();
        assert_eq!(errs.len(), 2);
    }

    #[test]
    fn pivot_and_in_place_radii() {
        for track in [1.42, 1.52] {
            let mut cfg = WorldConfig::default();
            cfg.chassis.track_width = track;
            let r = run_headland_turn(&cfg, TurnMode::Pivot).unwrap();
            assert!((r.circle.radius - track / 2.0).abs() < 1e-6, "{track}: {}", r.circle.radius);
        }
        let r = run_headland_turn(&WorldConfig::default(), TurnMode::InPlace).unwrap();
        assert!(r.circle.radius < 1e-6);
    }
}
