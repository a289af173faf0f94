//! Teleoperation server.
//!
//! WebSocket, one JSON object per text message, `type` names the message.
//!
//! Uplink: `hello {proto}`, `sticks {channels: [16]}`, `crsf {data: base64}`,
//! `takeover`, `step {n}` (lockstep only), `stats`, `stop`.
//!
//! Downlink: `hello`, `telemetry`, `event`, `role`, `stats`, `stepped`,
//! `error`, `stopped`.
//!
//! One stepper thread owns the world. Each client gets a thread that parses
//! uplink messages and forwards them over a channel, and drains its own
//! outbox. Telemetry and events are capped per client, oldest dropped first,
//! so a slow browser never stalls the stepper. Only the driver's
//! sticks reach the link; other clients watch until they send `takeover`.

use std::collections::{BTreeMap, VecDeque};
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use overrow_core::crsf::{encode_rc_channels, LinkStats, NUM_CHANNELS};
use overrow_core::drive::TelemetryRecord;
use overrow_core::field::{Event, FieldLayout, StepOutput, WorldConfig, WorldError};
use overrow_core::kinematics::WheelSpeeds;
use overrow_core::sprayer::SprayerConfig;
use overrow_core::terramech::ChassisConfig;
use serde::{Deserialize, Serialize};
use tungstenite::{Message, WebSocket};

use crate::runlog::{RunLog, Session};

pub const PROTO: u32 = 1;
pub const DEFAULT_TELEMETRY_HZ: f64 = 20.0;
pub const DEFAULT_QUEUE: usize = 256;
const POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Uplink {
    Hello { proto: u32 },
    Sticks { channels: Vec<u16> },
    Crsf { data: String },
    Takeover,
    Step { n: u32 },
    Stats,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Driver,
    Spectator,
}

/// Field geometry a client needs to draw the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneView {
    pub layout: FieldLayout,
    pub chassis: ChassisConfig,
    pub sprayer: SprayerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Downlink {
    Hello { proto: u32, session: String, role: Role, dt_ms: u64, telemetry_hz: f64, lockstep: bool, scene: Box<SceneView> },
    Telemetry { telemetry: TelemetryRecord, wheel_speeds: WheelSpeeds, stalled: [bool; 2], tank_l: f64, plots_sprayed: u64 },
    Event { event: Event },
    Role { role: Role },
    Stats { clients: usize, link: LinkStats, telemetry_dropped: u64 },
    Stepped { t_ms: u64 },
    Error { message: String },
    Stopped { t_ms: u64, log_sha256: String },
}

impl Downlink {
    fn json(&self) -> String {
        serde_json::to_string(self).expect("downlink messages serialize")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServeOptions {
    pub listen: String,
    pub telemetry_hz: f64,
    /// Step only on `step` messages instead of in real time.
    pub lockstep: bool,
    pub queue_capacity: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { listen: "127.0.0.1:8765".into(), telemetry_hz: DEFAULT_TELEMETRY_HZ, lockstep: false, queue_capacity: DEFAULT_QUEUE }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("telemetry rate must be positive, got {0} Hz")]
    Rate(f64),
    #[error(transparent)]
    World(#[from] WorldError),
}

/// Messages for one client in send order. Control messages are never
/// dropped; when more than `capacity` stream messages wait, the oldest goes.
struct Outbox {
    queue: Mutex<OutQueue>,
}

struct OutQueue {
    items: VecDeque<(bool, String)>,
    streamed: usize,
    capacity: usize,
    dropped: u64,
}

impl Outbox {
    fn new(capacity: usize) -> Self {
        Self { queue: Mutex::new(OutQueue { items: VecDeque::new(), streamed: 0, capacity: capacity.max(1), dropped: 0 }) }
    }

    fn control(&self, msg: &Downlink) {
        self.queue.lock().expect("outbox lock").items.push_back((false, msg.json()));
    }

    fn stream(&self, line: String) {
        let mut q = self.queue.lock().expect("outbox lock");
        if q.streamed == q.capacity {
            if let Some(i) = q.items.iter().position(|(s, _)| *s) {
                q.items.remove(i);
                q.streamed -= 1;
                q.dropped += 1;
            }
        }
        q.items.push_back((true, line));
        q.streamed += 1;
    }

    fn dropped(&self) -> u64 {
        self.queue.lock().expect("outbox lock").dropped
    }

    fn drain(&self) -> Vec<String> {
        let mut q = self.queue.lock().expect("outbox lock");
        q.streamed = 0;
        q.items.drain(..).map(|(_, l)| l).collect()
    }
}

enum ToStepper {
    Joined { id: u64, outbox: Arc<Outbox> },
    Uplink { id: u64, msg: Uplink },
    Left { id: u64 },
}

pub struct Server {
    listener: TcpListener,
    cfg: WorldConfig,
    opts: ServeOptions,
}

/// What a finished session leaves behind.
pub struct ServeReport {
    pub session: String,
    pub log: RunLog,
    pub link: LinkStats,
}

pub fn bind(cfg: WorldConfig, opts: ServeOptions) -> Result<Server, ServeError> {
    if !(opts.telemetry_hz > 0.0 && opts.telemetry_hz.is_finite()) {
        return Err(ServeError::Rate(opts.telemetry_hz));
    }
    let listener = TcpListener::bind(&opts.listen).map_err(|source| ServeError::Bind { addr: opts.listen.clone(), source })?;
    Ok(Server { listener, cfg, opts })
}

impl Server {
    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    /// Serves until a driver sends `stop`; returns the session's run log.
    pub fn run(self) -> Result<ServeReport, ServeError> {
        let session = Session::new(self.cfg)?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let (tx, rx) = mpsc::channel();
        let acceptor = spawn_acceptor(self.listener, tx, shutdown.clone(), self.opts.queue_capacity);
        let id = session_id();
        let mut stepper = Stepper::new(session, &self.opts, id.clone());
        if self.opts.lockstep {
            stepper.run_lockstep(&rx);
        } else {
            stepper.run_live(&rx);
        }
        let link = stepper.session.world.link.stats();
        let log = stepper.session.finish();
        let stopped = Downlink::Stopped { t_ms: log.manifest.duration_ms, log_sha256: log.sha256() };
        for out in stepper.clients.values() {
            out.control(&stopped);
        }
        shutdown.store(true, Ordering::SeqCst);
        let _ = acceptor.join();
        Ok(ServeReport { session: id, log, link })
    }
}

fn session_id() -> String {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64);
    format!("{:016x}", nanos ^ ((std::process::id() as u64) << 32))
}

fn spawn_acceptor(listener: TcpListener, tx: Sender<ToStepper>, shutdown: Arc<AtomicBool>, capacity: usize) -> JoinHandle<()> {
    thread::spawn(move || {
        listener.set_nonblocking(true).expect("listener supports non-blocking mode");
        let mut next_id = 0;
        let mut clients = Vec::new();
        while !shutdown.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    next_id += 1;
                    let (tx, shutdown) = (tx.clone(), shutdown.clone());
                    clients.push(thread::spawn(move || client_thread(next_id, stream, tx, shutdown, capacity)));
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
                Err(_) => thread::sleep(POLL),
            }
        }
        for c in clients {
            let _ = c.join();
        }
    })
}

fn client_thread(id: u64, stream: TcpStream, tx: Sender<ToStepper>, shutdown: Arc<AtomicBool>, capacity: usize) {
    let _ = stream.set_nonblocking(false);
    let _ = stream.set_nodelay(true);
    let Ok(mut ws) = tungstenite::accept(stream) else {
        return;
    };
    let _ = ws.get_mut().set_read_timeout(Some(POLL));
    let outbox = Arc::new(Outbox::new(capacity));
    if tx.send(ToStepper::Joined { id, outbox: outbox.clone() }).is_err() {
        return;
    }
    serve_client(id, &mut ws, &tx, &outbox, &shutdown);
    let _ = tx.send(ToStepper::Left { id });
}

fn serve_client(id: u64, ws: &mut WebSocket<TcpStream>, tx: &Sender<ToStepper>, outbox: &Outbox, shutdown: &AtomicBool) {
    loop {
        // read the flag before draining so nothing queued ahead of shutdown is lost
        let closing = shutdown.load(Ordering::SeqCst);
        for line in outbox.drain() {
            if ws.send(Message::text(line)).is_err() {
                return;
            }
        }
        if closing {
            let _ = ws.close(None);
            let _ = ws.flush();
            return;
        }
        match ws.read() {
            Ok(Message::Text(text)) => match serde_json::from_str::<Uplink>(text.as_str()) {
                Ok(msg) => {
                    if tx.send(ToStepper::Uplink { id, msg }).is_err() {
                        return;
                    }
                }
                Err(e) => outbox.control(&Downlink::Error { message: format!("malformed message: {e}") }),
            },
            Ok(Message::Binary(_)) => outbox.control(&Downlink::Error { message: "expected a JSON text message".into() }),
            Ok(Message::Close(_)) => return,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => return,
        }
    }
}

struct Stepper {
    session: Session,
    clients: BTreeMap<u64, Arc<Outbox>>,
    driver: Option<u64>,
    /// Driver bytes received since the last tick.
    pending: Vec<u8>,
    next_telemetry_ms: f64,
    telemetry_period_ms: f64,
    lockstep: bool,
    hz: f64,
    id: String,
    stopped: bool,
}

impl Stepper {
    fn new(session: Session, opts: &ServeOptions, id: String) -> Self {
        Self {
            session,
            clients: BTreeMap::new(),
            driver: None,
            pending: Vec::new(),
            next_telemetry_ms: 0.0,
            telemetry_period_ms: 1000.0 / opts.telemetry_hz,
            lockstep: opts.lockstep,
            hz: opts.telemetry_hz,
            id,
            stopped: false,
        }
    }

    fn run_live(&mut self, rx: &Receiver<ToStepper>) {
        let dt = Duration::from_millis(self.session.world.cfg.dt_ms);
        let mut deadline = Instant::now() + dt;
        while !self.stopped {
            let now = Instant::now();
            if now >= deadline {
                self.tick();
                deadline += dt;
                continue;
            }
            match rx.recv_timeout(deadline - now) {
                Ok(ev) => self.handle(ev),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
        }
    }

    fn run_lockstep(&mut self, rx: &Receiver<ToStepper>) {
        while !self.stopped {
            match rx.recv() {
                Ok(ev) => self.handle(ev),
                Err(_) => break,
            }
        }
    }

    fn send(&self, id: u64, msg: &Downlink) {
        if let Some(out) = self.clients.get(&id) {
            out.control(msg);
        }
    }

    fn error(&self, id: u64, message: impl Into<String>) {
        self.send(id, &Downlink::Error { message: message.into() });
    }

    fn handle(&mut self, ev: ToStepper) {
        match ev {
            ToStepper::Joined { id, outbox } => {
                let role = if self.driver.is_none() {
                    self.driver = Some(id);
                    Role::Driver
                } else {
                    Role::Spectator
                };
                let cfg = &self.session.world.cfg;
                outbox.control(&Downlink::Hello {
                    proto: PROTO,
                    session: self.id.clone(),
                    role,
                    dt_ms: cfg.dt_ms,
                    telemetry_hz: self.hz,
                    lockstep: self.lockstep,
                    scene: Box::new(SceneView { layout: cfg.layout.clone(), chassis: cfg.chassis.clone(), sprayer: cfg.sprayer }),
                });
                self.clients.insert(id, outbox);
            }
            ToStepper::Left { id } => {
                self.clients.remove(&id);
                if self.driver == Some(id) {
                    self.driver = None;
                    self.pending.clear();
                }
            }
            ToStepper::Uplink { id, msg } => self.uplink(id, msg),
        }
    }

    fn uplink(&mut self, id: u64, msg: Uplink) {
        let is_driver = self.driver == Some(id);
        match msg {
            Uplink::Hello { proto } if proto != PROTO => self.error(id, format!("unsupported protocol {proto}, server speaks {PROTO}")),
            Uplink::Hello { .. } => {}
            Uplink::Takeover => {
                if let Some(old) = self.driver.filter(|&d| d != id) {
                    self.send(old, &Downlink::Role { role: Role::Spectator });
                    self.pending.clear();
                }
                self.driver = Some(id);
                self.send(id, &Downlink::Role { role: Role::Driver });
            }
            Uplink::Stats => {
                let dropped = self.clients.get(&id).map_or(0, |o| o.dropped());
                let msg = Downlink::Stats { clients: self.clients.len(), link: self.session.world.link.stats(), telemetry_dropped: dropped };
                self.send(id, &msg);
            }
            _ if !is_driver => self.error(id, "spectators are read-only; send takeover to drive"),
            Uplink::Sticks { channels } => {
                let Ok(ch) = <[u16; NUM_CHANNELS]>::try_from(channels.as_slice()) else {
                    return self.error(id, format!("sticks needs {NUM_CHANNELS} channels, got {}", channels.len()));
                };
                match encode_rc_channels(&ch) {
                    Ok(frame) => self.pending.extend(frame),
                    Err(e) => self.error(id, e.to_string()),
                }
            }
            Uplink::Crsf { data } => match B64.decode(data) {
                Ok(bytes) => self.pending.extend(bytes),
                Err(e) => self.error(id, format!("crsf data is not base64: {e}")),
            },
            Uplink::Step { n } if self.lockstep => {
                for _ in 0..n {
                    self.tick();
                }
                self.send(id, &Downlink::Stepped { t_ms: self.session.clock() });
            }
            Uplink::Step { .. } => self.error(id, "step is only accepted in lockstep mode"),
            Uplink::Stop => self.stopped = true,
        }
    }

    fn tick(&mut self) {
        let bytes = std::mem::take(&mut self.pending);
        let out = self.session.step(&bytes);
        self.broadcast(&out);
    }

    fn broadcast(&mut self, out: &StepOutput) {
        let mut lines = Vec::new();
        let t = out.telemetry.timestamp;
        if t as f64 >= self.next_telemetry_ms {
            self.next_telemetry_ms += self.telemetry_period_ms * ((t as f64 - self.next_telemetry_ms) / self.telemetry_period_ms).floor().max(0.0)
                + self.telemetry_period_ms;
            let robot = &self.session.world.robot;
            lines.push(
                Downlink::Telemetry {
                    telemetry: out.telemetry,
                    wheel_speeds: robot.wheel_speeds,
                    stalled: robot.stalled,
                    tank_l: robot.sprayer.tank_level,
                    plots_sprayed: self.session.world.plots_sprayed(),
                }
                .json(),
            );
        }
        lines.extend(out.events.iter().map(|e| Downlink::Event { event: e.clone() }.json()));
        for outbox in self.clients.values() {
            for l in &lines {
                outbox.stream(l.clone());
            }
        }
    }
}
