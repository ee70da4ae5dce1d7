//! Live simulation over a local TCP socket.
//!
//! Newline-delimited JSON both ways. Clients send commands
//! (`{"cmd": "set_damping", "pitch": -0.1}`), the server answers each with
//! an `ack` or `error` message and broadcasts `state` and `skeleton`
//! messages at the broadcast rate. Physics runs on its own thread and takes
//! commands from a single queue fed by the I/O side.

use crate::aero::{arch_pattern, ConsciousInput, InputGroups, ARCH_LIMIT};
use crate::body::{forward_chain, joint_from_name, MassState, Posture, Seg};
use crate::dynamics::{DynamicsError, MassRates, Plant, SkydiverState, TrimSolution};
use crate::estimator::attitude_angles;
use crate::maneuvers::{
    frame_from_schedule, layout_arms, layout_plant, layout_timings, run_layout, straight_posture, LayoutKind, LayoutTiming, LAYOUT_DAMP_HIGH,
};
use crate::spatial::EulerZYX;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

pub const PHYSICS_HZ: f64 = 240.0;
pub const BROADCAST_HZ: f64 = 30.0;

pub const INPUT_BOUNDS: (f64, f64) = (0.0, 6.5);
pub const DAMPING_BOUNDS: (f64, f64) = (-0.25, 24.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    SetDof { joint: String, psi: f64, theta: f64, phi: f64 },
    SetArch { angle: f64 },
    SetInput { yaw: Option<f64>, pitch: Option<f64>, roll: Option<f64> },
    SetDamping { yaw: Option<f64>, pitch: Option<f64>, roll: Option<f64> },
    Pause { paused: bool },
    Reset,
    LoadPattern { name: String },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SetDof { .. } => "set_dof",
            Command::SetArch { .. } => "set_arch",
            Command::SetInput { .. } => "set_input",
            Command::SetDamping { .. } => "set_damping",
            Command::Pause { .. } => "pause",
            Command::Reset => "reset",
            Command::LoadPattern { .. } => "load_pattern",
        }
    }
}

/// Layout playback started by `load_pattern`. Inputs and arms follow the
/// schedule; pitch damping is left to the client until the rotation reaches
/// the stop angle, where the script restores high damping.
#[derive(Clone, Debug)]
struct LayoutScript {
    timing: LayoutTiming,
    start: f64,
    rotation: f64,
    stop: Option<f64>,
}

impl LayoutScript {
    fn arms(&self, t: f64) -> f64 {
        layout_arms(&self.timing, t - self.start, self.stop)
    }
}

/// Simulator state behind the server, usable without sockets.
pub struct Session {
    plant: Plant,
    base_groups: InputGroups,
    trim: TrimSolution,
    neutral: Posture,
    /// Posture before the arch pattern is applied.
    pub posture: Posture,
    pub arch: f64,
    pub input: ConsciousInput,
    pub state: SkydiverState,
    pub t: f64,
    pub paused: bool,
    script: Option<LayoutScript>,
    prev_mass: Option<MassState>,
    altitude0: f64,
}

impl Session {
    pub fn new(plant: Plant, altitude: f64) -> Result<Self, DynamicsError> {
        let measured = Posture::neutral(0.5);
        let trim = crate::dynamics::trim(&plant, &measured)?;
        let neutral = trim.posture(&measured);
        Ok(Session {
            state: trim.state(),
            posture: neutral.clone(),
            neutral,
            trim,
            base_groups: plant.groups.clone(),
            plant,
            arch: 0.0,
            input: ConsciousInput::baseline(),
            t: 0.0,
            paused: false,
            script: None,
            prev_mass: None,
            altitude0: altitude,
        })
    }

    pub fn dt(&self) -> f64 {
        self.plant.cfg.dt
    }

    pub fn scripted(&self) -> bool {
        self.script.is_some()
    }

    /// Accumulated body X rotation since the scripted layout started.
    pub fn script_rotation(&self) -> Option<f64> {
        self.script.as_ref().map(|s| s.rotation)
    }

    pub fn effective_posture(&self) -> Posture {
        if self.arch == 0.0 {
            self.posture.clone()
        } else {
            arch_pattern(self.arch, &self.posture)
        }
    }

    fn clear_script(&mut self) {
        if self.script.take().is_some() {
            self.plant.groups = self.base_groups.clone();
        }
    }

    pub fn apply(&mut self, cmd: &Command) -> Result<Value, String> {
        let in_range = |v: f64, (lo, hi): (f64, f64), what: &str| {
            if v.is_finite() && v >= lo && v <= hi {
                Ok(v)
            } else {
                Err(format!("{what} {v} outside [{lo}, {hi}]"))
            }
        };
        match cmd {
            Command::SetDof { joint, psi, theta, phi } => {
                let j = joint_from_name(joint).ok_or_else(|| format!("unknown joint {joint}"))?;
                in_range(*psi, (-PI, PI), "psi")?;
                in_range(*theta, (-FRAC_PI_2, FRAC_PI_2), "theta")?;
                in_range(*phi, (-PI, PI), "phi")?;
                self.clear_script();
                self.posture.joints[j] = EulerZYX::new(*psi, *theta, *phi).to_quat();
                Ok(json!({"joint": joint}))
            }
            Command::SetArch { angle } => {
                self.arch = in_range(*angle, (-ARCH_LIMIT, ARCH_LIMIT), "arch angle")?;
                Ok(json!({"angle": self.arch}))
            }
            Command::SetInput { yaw, pitch, roll } => {
                let mut u = self.input;
                for (v, slot, what) in [(yaw, &mut u.in_yaw, "yaw input"), (pitch, &mut u.in_pitch, "pitch input"), (roll, &mut u.in_roll, "roll input")] {
                    if let Some(v) = v {
                        *slot = in_range(*v, INPUT_BOUNDS, what)?;
                    }
                }
                self.input = u;
                Ok(json!(u))
            }
            Command::SetDamping { yaw, pitch, roll } => {
                let mut u = self.input;
                for (v, slot, what) in [(yaw, &mut u.cd_yaw, "yaw damping"), (pitch, &mut u.cd_pitch, "pitch damping"), (roll, &mut u.cd_roll, "roll damping")] {
                    if let Some(v) = v {
                        *slot = in_range(*v, DAMPING_BOUNDS, what)?;
                    }
                }
                self.input = u;
                Ok(json!(u))
            }
            Command::Pause { paused } => {
                self.paused = *paused;
                Ok(json!({"paused": paused}))
            }
            Command::Reset => {
                self.clear_script();
                self.state = self.trim.state();
                self.posture = self.neutral.clone();
                self.arch = 0.0;
                self.input = ConsciousInput::baseline();
                self.prev_mass = None;
                self.t = 0.0;
                Ok(json!({}))
            }
            Command::LoadPattern { name } => {
                match name.as_str() {
                    "neutral" => {
                        self.clear_script();
                        self.posture = self.neutral.clone();
                    }
                    "straight" => {
                        self.clear_script();
                        self.posture = Posture::zero();
                    }
                    "layout_front" | "layout_back" => {
                        let kind = if name == "layout_front" { LayoutKind::Front } else { LayoutKind::Back };
                        self.clear_script();
                        let plant = layout_plant(&self.plant);
                        let timing = layout_timings(kind)
                            .into_iter()
                            .find(|t| run_layout(&self.plant, kind, t, false).is_ok_and(|r| r.completed))
                            .unwrap_or_default();
                        let tr = crate::dynamics::trim(&plant, &straight_posture(0.0)).map_err(|e| e.to_string())?;
                        self.plant = plant;
                        self.state = tr.state();
                        self.posture = straight_posture(0.0);
                        self.arch = 0.0;
                        self.input = ConsciousInput { cd_pitch: LAYOUT_DAMP_HIGH, ..ConsciousInput::baseline() };
                        self.prev_mass = None;
                        self.script = Some(LayoutScript { timing, start: self.t, rotation: 0.0, stop: None });
                        return Ok(json!({"pattern": name, "onset": self.t + timing.onset, "timing": timing}));
                    }
                    other => return Err(format!("unknown pattern {other}")),
                }
                Ok(json!({"pattern": name}))
            }
        }
    }

    pub fn step(&mut self) -> Result<(), DynamicsError> {
        if self.paused {
            return Ok(());
        }
        let t = self.t;
        let dt = self.dt();
        let frame = match &mut self.script {
            Some(sc) => {
                let tl = t - sc.start;
                self.input.in_pitch = if tl >= sc.timing.prep_start && tl < sc.timing.onset { 1.0 } else { 0.0 };
                if tl >= sc.timing.onset && sc.stop.is_none() && sc.rotation.abs() >= sc.timing.stop_rotation_deg.to_radians() {
                    sc.stop = Some(tl);
                    self.input.cd_pitch = LAYOUT_DAMP_HIGH;
                }
                let sc = sc.clone();
                self.posture = straight_posture(sc.arms(t));
                self.prev_mass = None;
                frame_from_schedule(&self.plant, &|tt: f64| straight_posture(sc.arms(tt)), t)
            }
            None => {
                let p = self.effective_posture();
                let mass = forward_chain(&self.plant.model, &p);
                let rates = match &self.prev_mass {
                    Some(m) => MassRates { r_dot: (mass.r_cg - m.r_cg) / dt, i_dot: (mass.inertia - m.inertia) / dt },
                    None => MassRates::default(),
                };
                self.prev_mass = Some(mass);
                let arch = (self.arch != 0.0).then_some(self.arch);
                self.plant.frame(&p, rates, arch)
            }
        };
        self.state = self.plant.step(&self.state, &frame, &self.input, t)?;
        if let Some(sc) = self.script.as_mut() {
            sc.rotation += self.state.omega.x * dt;
        }
        self.t += dt;
        Ok(())
    }

    pub fn state_message(&self) -> Value {
        let s = &self.state;
        let (heading, pitch, roll) = attitude_angles(s.q, 0.0);
        let vi = s.inertial_velocity();
        json!({
            "type": "state",
            "t": self.t,
            "euler": {"heading": heading, "pitch": pitch, "roll": roll},
            "q": s.q.to_array(),
            "v": [s.v.x, s.v.y, s.v.z],
            "speed": s.v.norm(),
            "omega": [s.omega.x, s.omega.y, s.omega.z],
            "altitude": self.altitude0 + s.pos.z,
            "fall_rate": -vi.z,
            "arch": self.arch,
            "input": self.input,
            "paused": self.paused,
            "scripted": self.script.is_some(),
        })
    }

    /// Segment end points in inertial axes, relative to the body origin.
    pub fn skeleton_message(&self) -> Value {
        let p = self.effective_posture();
        let m = forward_chain(&self.plant.model, &p);
        let segs: Vec<Value> = Seg::ALL
            .iter()
            .map(|&seg| {
                let i = seg.idx();
                let a = m.d[i];
                let b = a + m.q[i].rotate(&self.plant.model.segment_tip_local(seg));
                let (a, b) = (self.state.q.rotate(&a), self.state.q.rotate(&b));
                json!({"segment": seg.name(), "from": [a.x, a.y, a.z], "to": [b.x, b.y, b.z]})
            })
            .collect();
        json!({"type": "skeleton", "t": self.t, "segments": segs})
    }
}

pub fn parse_command(line: &str) -> Result<Command, String> {
    serde_json::from_str(line).map_err(|e| format!("malformed command: {e}"))
}

pub fn error_message(msg: &str, cmd: Option<&str>) -> Value {
    json!({"type": "error", "cmd": cmd, "message": msg})
}

#[derive(Clone, Copy, Debug)]
pub struct ServeOptions {
    /// Multiplier on wall-clock pacing; 1 is real time.
    pub speed: f64,
    /// Stop after this many physics steps.
    pub max_steps: Option<u64>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions { speed: 1.0, max_steps: None }
    }
}

type Clients = Arc<Mutex<Vec<(u64, TcpStream)>>>;

pub struct Server {
    listener: TcpListener,
    pub addr: SocketAddr,
    pub stop: Arc<AtomicBool>,
}

impl Server {
    pub fn bind(port: u16) -> std::io::Result<Server> {
        let listener = TcpListener::bind(("127.0.0.1", port))?;
        let addr = listener.local_addr()?;
        Ok(Server { listener, addr, stop: Arc::new(AtomicBool::new(false)) })
    }

    /// Run until `stop` is set or `max_steps` is reached.
    pub fn run(self, mut session: Session, opts: ServeOptions) -> Result<(), DynamicsError> {
        let clients: Clients = Arc::new(Mutex::new(Vec::new()));
        let (tx, rx) = channel::<(u64, String)>();
        self.listener.set_nonblocking(true).ok();
        let stop = self.stop.clone();
        let acc_clients = clients.clone();
        let listener = self.listener;
        let acceptor = thread::spawn(move || accept_loop(listener, acc_clients, tx, stop));
        let result = physics_loop(&mut session, &clients, rx, &self.stop, opts);
        self.stop.store(true, Ordering::SeqCst);
        let _ = acceptor.join();
        result
    }
}

fn accept_loop(listener: TcpListener, clients: Clients, tx: Sender<(u64, String)>, stop: Arc<AtomicBool>) {
    let mut next_id = 0u64;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let id = next_id;
                next_id += 1;
                stream.set_nodelay(true).ok();
                stream.set_write_timeout(Some(Duration::from_millis(200))).ok();
                let Ok(reader) = stream.try_clone() else { continue };
                clients.lock().unwrap().push((id, stream));
                let tx = tx.clone();
                let stop = stop.clone();
                thread::spawn(move || {
                    reader.set_read_timeout(Some(Duration::from_millis(100))).ok();
                    let mut r = BufReader::new(reader);
                    let mut line = String::new();
                    while !stop.load(Ordering::SeqCst) {
                        match r.read_line(&mut line) {
                            Ok(0) => break,
                            Ok(_) => {
                                if !line.trim().is_empty() && tx.send((id, line.trim().to_string())).is_err() {
                                    break;
                                }
                                line.clear();
                            }
                            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
                            Err(_) => break,
                        }
                    }
                });
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
    }
}

fn send(clients: &Clients, to: Option<u64>, msg: &Value) {
    let mut line = msg.to_string();
    line.push('\n');
    let mut cs = clients.lock().unwrap();
    cs.retain_mut(|(id, s)| if to.is_none_or(|t| t == *id) { s.write_all(line.as_bytes()).is_ok() } else { true });
}

fn physics_loop(
    session: &mut Session,
    clients: &Clients,
    rx: Receiver<(u64, String)>,
    stop: &AtomicBool,
    opts: ServeOptions,
) -> Result<(), DynamicsError> {
    let dt = session.dt();
    let decimation = ((1.0 / dt) / BROADCAST_HZ).round().max(1.0) as u64;
    let start = Instant::now();
    let mut steps = 0u64;
    while !stop.load(Ordering::SeqCst) {
        while let Ok((id, line)) = rx.try_recv() {
            let reply = match parse_command(&line) {
                Ok(cmd) => match session.apply(&cmd) {
                    Ok(v) => json!({"type": "ack", "cmd": cmd.name(), "value": v}),
                    Err(e) => error_message(&e, Some(cmd.name())),
                },
                Err(e) => error_message(&e, None),
            };
            send(clients, Some(id), &reply);
        }
        if let Err(e) = session.step() {
            send(clients, None, &error_message(&format!("simulation diverged: {e}; resetting"), None));
            session.apply(&Command::Reset).ok();
        }
        steps += 1;
        if steps.is_multiple_of(decimation) {
            send(clients, None, &session.state_message());
            send(clients, None, &session.skeleton_message());
        }
        if opts.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
        let due = Duration::from_secs_f64(steps as f64 * dt / opts.speed);
        let el = start.elapsed();
        if due > el {
            thread::sleep(due - el);
        }
    }
    Ok(())
}
