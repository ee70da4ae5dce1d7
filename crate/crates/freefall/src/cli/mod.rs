//! Scenario loading and the command implementations behind the binary.

pub mod serve;

use crate::aero::{ConsciousInput, InputGroups};
use crate::body::{AnthroConfig, BodyModel, Posture, Seg};
use crate::dynamics::{trim, DynamicsError, Frame, Plant, SimConfig, SkydiverState, TrimSolution};
use crate::estimator::{attitude_angles, channel_rms, estimate_track, ChannelRms, EstimatorError, MeasurementProfile, UkfConfig};
use crate::ingest::{load_measurements, load_posture_stream, write_atomic, write_measurements, IngestError, MeasurementTrack};
use crate::maneuvers::{
    excitation_posture, layout, oscillation_run, oscillation_sweep, synthetic_track, LayoutKind, LayoutRun, LayoutTiming, SweepConfig,
    SyntheticSpec,
};
use crate::spatial::EulerZYX;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("estimation failure: {0}")]
    Estimation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Estimation(_) => 4,
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::Body(b) => CliError::Config(b.to_string()),
            other => CliError::Divergence(other.to_string()),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::Config(m) | EstimatorError::Misaligned(m) => CliError::Config(m),
            EstimatorError::Dynamics(d) => d.into(),
            other => CliError::Estimation(other.to_string()),
        }
    }
}

// ---------------------------------------------------------------- scenario

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pattern {
    /// Standard belly-to-earth pose held still.
    Neutral,
    /// All joints at zero, arms at the side.
    Straight,
    /// Asymmetric arm and leg sweeps of the given amplitude.
    Excitation { amplitude: f64 },
    /// Right arm lowered and left arm raised by `angle`, which yaws the body.
    Turn { angle: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PostureSource {
    File { path: PathBuf },
    Synthetic { pattern: Pattern, duration: f64 },
    LiveStream,
}

impl Default for PostureSource {
    fn default() -> Self {
        PostureSource::Synthetic { pattern: Pattern::Neutral, duration: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationSection {
    pub profile: String,
    pub measurements: Option<PathBuf>,
    /// Used when no measurement file is given.
    pub synthetic: SyntheticSpec,
    pub ukf: UkfConfig,
    pub negative_damping: bool,
}

impl Default for EstimationSection {
    fn default() -> Self {
        EstimationSection {
            profile: "tracking".into(),
            measurements: None,
            synthetic: SyntheticSpec::default(),
            ukf: UkfConfig { n_solve: 4, ..UkfConfig::default() },
            negative_damping: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutSection {
    pub timing: Option<LayoutTiming>,
    pub hold_damping: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    /// Anthropometric TOML; the nominal 70 kg / 1.70 m body when absent.
    pub body: Option<PathBuf>,
    pub sim: SimConfig,
    pub input_groups: String,
    pub posture: PostureSource,
    /// Constant coefficients for reconstruction; baseline when absent.
    pub input: Option<ConsciousInput>,
    pub estimation: Option<EstimationSection>,
    pub layout: LayoutSection,
    pub oscillate: SweepConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub initial_altitude: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            body: None,
            sim: SimConfig::default(),
            input_groups: "back-track".into(),
            posture: PostureSource::default(),
            input: None,
            estimation: None,
            layout: LayoutSection::default(),
            oscillate: SweepConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            initial_altitude: 4000.0,
        }
    }
}

impl Scenario {
    /// Parse a scenario file. Relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut s: Scenario = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        s.resolve(base);
        s.validate()?;
        Ok(s)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(b) = self.body.as_mut() {
            fix(b);
        }
        if let PostureSource::File { path } = &mut self.posture {
            fix(path);
        }
        if let Some(m) = self.estimation.as_mut().and_then(|e| e.measurements.as_mut()) {
            fix(m);
        }
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let exists = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(CliError::Config(format!("{what} {} does not exist", p.display())))
            }
        };
        if let Some(b) = &self.body {
            exists(b, "body config")?;
        }
        if let PostureSource::File { path } = &self.posture {
            exists(path, "posture file")?;
        }
        if let PostureSource::Synthetic { duration, .. } = &self.posture {
            if !(*duration > 0.0) {
                return Err(CliError::Config("synthetic duration must be positive".into()));
            }
        }
        if let Some(e) = &self.estimation {
            if let Some(m) = &e.measurements {
                exists(m, "measurement file")?;
            }
            if MeasurementProfile::by_name(&e.profile).is_none() {
                return Err(CliError::Config(format!("unknown profile {}", e.profile)));
            }
        }
        if InputGroups::by_name(&self.input_groups).is_none() {
            return Err(CliError::Config(format!("unknown input groups {}", self.input_groups)));
        }
        if !(self.sim.dt > 0.0) {
            return Err(CliError::Config("sim.dt must be positive".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<BodyModel, CliError> {
        let cfg = match &self.body {
            Some(p) => AnthroConfig::load(p).map_err(|e| CliError::Config(e.to_string()))?,
            None => AnthroConfig::default(),
        };
        BodyModel::from_config(&cfg).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn plant(&self) -> Result<Plant, CliError> {
        let groups = InputGroups::by_name(&self.input_groups).expect("validated");
        Ok(Plant::new(self.model()?, self.sim.clone(), groups))
    }

    /// Posture samples on the simulation grid.
    pub fn postures(&self, plant: &Plant) -> Result<Vec<Posture>, CliError> {
        match &self.posture {
            PostureSource::File { path } => {
                let ps = load_posture_stream(path)?;
                if ps.len() >= 2 {
                    let rate_dt = ps[1].t - ps[0].t;
                    if (rate_dt - plant.cfg.dt).abs() > 1e-6 {
                        return Err(CliError::Config(format!(
                            "posture stream step {rate_dt} s differs from sim.dt {} s",
                            plant.cfg.dt
                        )));
                    }
                }
                Ok(ps)
            }
            PostureSource::Synthetic { pattern, duration } => {
                let n = (duration / plant.cfg.dt).round() as usize;
                let base = neutral_trimmed(plant)?.1;
                Ok((0..=n)
                    .map(|k| {
                        let t = k as f64 * plant.cfg.dt;
                        let mut p = pattern_posture(pattern, &base, t);
                        p.t = t;
                        p
                    })
                    .collect())
            }
            PostureSource::LiveStream => Err(CliError::Config("live-stream postures are only available to serve".into())),
        }
    }

    pub fn profile(&self, override_name: Option<&str>) -> Result<MeasurementProfile, CliError> {
        let name = override_name.map(str::to_string).or_else(|| self.estimation.as_ref().map(|e| e.profile.clone())).unwrap_or_else(|| "tracking".into());
        MeasurementProfile::by_name(&name).ok_or_else(|| CliError::Config(format!("unknown profile {name}")))
    }
}

pub fn neutral_trimmed(plant: &Plant) -> Result<(TrimSolution, Posture), CliError> {
    let measured = Posture::neutral(0.5);
    let tr = trim(plant, &measured)?;
    let p = tr.posture(&measured);
    Ok((tr, p))
}

pub fn pattern_posture(pattern: &Pattern, neutral: &Posture, t: f64) -> Posture {
    match pattern {
        Pattern::Neutral => neutral.clone(),
        Pattern::Straight => Posture::zero(),
        Pattern::Excitation { amplitude } => excitation_posture(neutral, *amplitude, t),
        Pattern::Turn { angle } => {
            let mut p = neutral.clone();
            let e = neutral.euler();
            for (s, sign) in [(Seg::UpperArmR, 1.0), (Seg::UpperArmL, -1.0)] {
                let a = e[s.joint().unwrap()];
                p.set_euler(s, EulerZYX::new(a.psi, a.theta, a.phi + sign * angle));
            }
            p
        }
    }
}

// ------------------------------------------------------------------ output

fn out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, text.as_bytes()).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable report");
    s.push('\n');
    write_text(path, &s)
}

pub const TRAJECTORY_HEADER: &str = "t_s,q0,q1,q2,q3,u_mps,v_mps,w_mps,p_radps,q_radps,r_radps,x_m,y_m,z_m,heading_rad,pitch_rad,roll_rad,v_hor_mps,v_vert_mps";

/// One row per state; the time of state k is `t0 + k dt`.
pub fn trajectory_csv(t: &[f64], states: &[SkydiverState]) -> String {
    let mut s = String::with_capacity(states.len() * 256);
    s.push_str(TRAJECTORY_HEADER);
    s.push('\n');
    let mut held = 0.0;
    for (tk, st) in t.iter().zip(states) {
        let (h, p, r) = attitude_angles(st.q, held);
        held = h;
        let vi = st.inertial_velocity();
        let q = st.q;
        let _ = writeln!(
            s,
            "{tk},{},{},{},{},{},{},{},{},{},{},{},{},{},{h},{p},{r},{},{}",
            q.w,
            q.x,
            q.y,
            q.z,
            st.v.x,
            st.v.y,
            st.v.z,
            st.omega.x,
            st.omega.y,
            st.omega.z,
            st.pos.x,
            st.pos.y,
            st.pos.z,
            (vi.x * vi.x + vi.y * vi.y).sqrt(),
            vi.z
        );
    }
    s
}

fn divergence_dump(dir: &Path, e: &DynamicsError) {
    let _ = write_text(&dir.join("divergence.txt"), &format!("{e}\n"));
}

// ---------------------------------------------------------------- commands

#[derive(Clone, Debug, Serialize)]
pub struct TrimReport {
    pub terminal_speed_mps: f64,
    pub body_pitch_deg: f64,
    pub knee_bend_deg: f64,
    pub residual: [f64; 3],
    pub iterations: usize,
    pub runtime_s: f64,
    pub mass_kg: f64,
}

pub fn cmd_trim(sc: &Scenario) -> Result<TrimReport, CliError> {
    let plant = sc.plant()?;
    let measured = match &sc.posture {
        PostureSource::File { .. } => sc.postures(&plant)?.remove(0),
        _ => Posture::neutral(0.5),
    };
    let t0 = Instant::now();
    let tr = trim(&plant, &measured)?;
    let report = TrimReport {
        terminal_speed_mps: tr.terminal_speed,
        body_pitch_deg: tr.body_pitch.to_degrees(),
        knee_bend_deg: tr.knee_bend.to_degrees(),
        residual: tr.residual,
        iterations: tr.iterations,
        runtime_s: t0.elapsed().as_secs_f64(),
        mass_kg: plant.model.total_mass,
    };
    out_dir(&sc.output_dir)?;
    write_json(&sc.output_dir.join("trim.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct ReconstructReport {
    pub samples: usize,
    pub duration_s: f64,
    pub input: ConsciousInput,
    pub rms: Option<Vec<ChannelRms>>,
}

pub fn cmd_reconstruct(sc: &Scenario, profile: Option<&str>) -> Result<ReconstructReport, CliError> {
    let plant = sc.plant()?;
    let postures = sc.postures(&plant)?;
    let frames = plant.track(&postures, None)?;
    let tr = trim(&plant, &postures[0])?;
    let input = sc.input.unwrap_or_else(ConsciousInput::baseline);
    out_dir(&sc.output_dir)?;
    let steps = &frames[..frames.len().saturating_sub(1)];
    let states = match plant.simulate(tr.state(), steps, |_, _| input) {
        Ok(s) => s,
        Err(e) => {
            divergence_dump(&sc.output_dir, &e);
            return Err(e.into());
        }
    };
    let t: Vec<f64> = (0..states.len()).map(|k| k as f64 * plant.cfg.dt).collect();
    write_text(&sc.output_dir.join("trajectory.csv"), &trajectory_csv(&t, &states))?;
    let rms = match sc.estimation.as_ref().and_then(|e| e.measurements.as_ref()) {
        Some(path) => {
            let prof = sc.profile(profile)?;
            let meas = load_measurements(path, Some(&prof.channels))?;
            Some(channel_rms(&states, &meas, &prof.channels))
        }
        None => None,
    };
    let report = ReconstructReport { samples: states.len(), duration_s: t.last().copied().unwrap_or(0.0), input, rms };
    write_json(&sc.output_dir.join("reconstruct.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimateReport {
    pub profile: String,
    pub samples: usize,
    pub rms: Vec<ChannelRms>,
    pub diverged_sigma_points: usize,
    pub partial: bool,
    pub synthetic: bool,
    /// Fraction of samples with every coefficient sign matching the truth,
    /// outside one second around each coefficient step (synthetic runs only).
    pub sign_agreement: Option<f64>,
    pub runtime_s: f64,
}

pub const COEFF_HEADER: &str = "t_s,in_yaw,in_pitch,in_roll,cd_yaw,cd_pitch,cd_roll,sd_in_yaw,sd_in_pitch,sd_in_roll,sd_cd_yaw,sd_cd_pitch,sd_cd_roll";

/// Share of samples whose coefficient signs all agree with `truth`, skipping
/// samples within `guard` seconds of a step.
pub fn sign_agreement(t: &[f64], est: &[[f64; 6]], truth: impl Fn(f64) -> [f64; 6], steps: &[f64], guard: f64) -> f64 {
    let mut n = 0usize;
    let mut ok = 0usize;
    for (tk, x) in t.iter().zip(est) {
        if steps.iter().any(|s| (tk - s).abs() < guard) {
            continue;
        }
        n += 1;
        let tr = truth(*tk);
        if (0..6).all(|j| sign_matches(tr[j], x[j])) {
            ok += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        ok as f64 / n as f64
    }
}

pub fn sign_matches(truth: f64, est: f64) -> bool {
    if truth > 0.0 {
        est > 0.0
    } else if truth < 0.0 {
        est < 0.0
    } else {
        est == 0.0
    }
}

pub struct EstimateOutput {
    pub report: EstimateReport,
    pub estimate: crate::estimator::Estimate,
}

pub fn cmd_estimate(sc: &Scenario, profile: Option<&str>, seed: Option<u64>) -> Result<EstimateOutput, CliError> {
    let plant = sc.plant()?;
    let est_cfg = sc.estimation.clone().unwrap_or_default();
    let prof = sc.profile(profile)?;
    let mut cfg = est_cfg.ukf.clone();
    cfg.dt = plant.cfg.dt;
    if est_cfg.negative_damping {
        cfg = cfg.with_negative_damping();
    }
    out_dir(&sc.output_dir)?;
    let seed = seed.unwrap_or(sc.seed);
    let (frames, meas, init, synth): (Vec<Frame>, MeasurementTrack, SkydiverState, Option<&SyntheticSpec>) = match &est_cfg.measurements {
        Some(path) => {
            let meas = load_measurements(path, Some(&prof.channels))?;
            let postures = sc.postures(&plant)?;
            let frames = plant.track(&postures, None)?;
            let init = trim(&plant, &postures[0])?.state();
            (frames, meas, init, None)
        }
        None => {
            let tr = synthetic_track(&plant, &est_cfg.synthetic, &prof, seed)?;
            write_measurements(&sc.output_dir.join("measurements.csv"), &tr.measurements)?;
            (tr.frames, tr.measurements, tr.init, Some(&est_cfg.synthetic))
        }
    };
    let t0 = Instant::now();
    let est = estimate_track(&plant, &frames, &meas, init, &cfg, &prof)?;
    let runtime_s = t0.elapsed().as_secs_f64();
    let mut coeff = String::from(COEFF_HEADER);
    coeff.push('\n');
    for ((t, x), sd) in est.t.iter().zip(&est.x).zip(&est.std) {
        let _ = write!(coeff, "{t}");
        for v in x.iter().chain(sd.iter()) {
            let _ = write!(coeff, ",{v}");
        }
        coeff.push('\n');
    }
    write_text(&sc.output_dir.join("coefficients.csv"), &coeff)?;
    write_text(&sc.output_dir.join("reconstruction.csv"), &trajectory_csv(&est.t, &est.states))?;
    let sign = synth.map(|s| {
        let mut steps = s.step_times();
        if !steps.contains(&0.0) {
            steps.push(0.0);
        }
        sign_agreement(&est.t, &est.x, |t| s.input_at(t).to_array(), &steps, 1.0)
    });
    let report = EstimateReport {
        profile: prof.name.clone(),
        samples: est.t.len(),
        rms: est.rms.clone(),
        diverged_sigma_points: est.diverged_points,
        partial: est.partial,
        synthetic: synth.is_some(),
        sign_agreement: sign,
        runtime_s,
    };
    write_json(&sc.output_dir.join("estimate.json"), &report)?;
    if est.partial {
        return Err(CliError::Estimation(format!("filter stopped early at t = {:.3} s", est.t.last().copied().unwrap_or(0.0))));
    }
    Ok(EstimateOutput { report, estimate: est })
}

#[derive(Clone, Debug, Serialize)]
pub struct LayoutReport {
    pub kind: LayoutKind,
    pub completed: bool,
    pub rotation_deg: f64,
    pub final_level_error_deg: f64,
    pub stop_time_s: Option<f64>,
    pub hold_damping: bool,
    pub timing: LayoutTiming,
}

pub const LAYOUT_HEADER: &str = "arms_rad,in_pitch,cd_pitch,rotation_rad";

pub fn layout_csv(run: &LayoutRun) -> String {
    let t: Vec<f64> = run.samples.iter().map(|s| s.t).collect();
    let states: Vec<SkydiverState> = run.samples.iter().map(|s| s.state).collect();
    let base = trajectory_csv(&t, &states);
    let mut out = String::with_capacity(base.len() + run.samples.len() * 48);
    for (k, line) in base.lines().enumerate() {
        out.push_str(line);
        if k == 0 {
            let _ = writeln!(out, ",{LAYOUT_HEADER}");
        } else {
            let s = &run.samples[k - 1];
            let _ = writeln!(out, ",{},{},{},{}", s.arms, s.in_pitch, s.cd_pitch, s.rotation);
        }
    }
    out
}

pub fn cmd_layout(sc: &Scenario, kind: LayoutKind, hold_damping: bool) -> Result<(LayoutReport, LayoutRun), CliError> {
    let plant = sc.plant()?;
    let hold = hold_damping || sc.layout.hold_damping;
    let run = layout(&plant, kind, sc.layout.timing, hold)?;
    let name = match kind {
        LayoutKind::Front => "front",
        LayoutKind::Back => "back",
    };
    out_dir(&sc.output_dir)?;
    write_text(&sc.output_dir.join(format!("layout_{name}.csv")), &layout_csv(&run))?;
    let report = LayoutReport {
        kind,
        completed: run.completed,
        rotation_deg: run.rotation.to_degrees(),
        final_level_error_deg: run.final_level_error.to_degrees(),
        stop_time_s: run.stop_time,
        hold_damping: hold,
        timing: run.timing,
    };
    write_json(&sc.output_dir.join(format!("layout_{name}.json")), &report)?;
    if !run.completed && !hold {
        log::warn!("{name} layout did not complete a full rotation");
    }
    Ok((report, run))
}

#[derive(Clone, Debug, Serialize)]
pub struct OscillateReport {
    pub sweep: crate::maneuvers::Sweep,
    pub regimes_seen: Vec<crate::maneuvers::Regime>,
}

pub fn cmd_oscillate(sc: &Scenario) -> Result<OscillateReport, CliError> {
    let plant = sc.plant()?;
    let cfg = &sc.oscillate;
    let sweep = oscillation_sweep(&plant, cfg)?;
    out_dir(&sc.output_dir)?;
    let mut csv = String::from("damping,shoulder_rad,ratio,variation,final_amplitude_rad,regime\n");
    for p in &sweep.points {
        let _ = writeln!(csv, "{},{},{},{},{},{:?}", p.damping, p.shoulder, p.ratio, p.variation, p.final_amplitude, p.regime);
    }
    write_text(&sc.output_dir.join("sweep.csv"), &csv)?;
    if let Some(p) = &sweep.sustained {
        let run = oscillation_run(&plant, cfg.mode, p.damping, p.shoulder, cfg.duration)?;
        let mut s = String::from("t_s,angle_rad\n");
        for (t, a) in run.t.iter().zip(&run.angle) {
            let _ = writeln!(s, "{t},{a}");
        }
        write_text(&sc.output_dir.join("oscillation.csv"), &s)?;
    }
    let mut regimes_seen = Vec::new();
    for p in sweep.points.iter().chain(sweep.sustained.iter()) {
        if !regimes_seen.contains(&p.regime) {
            regimes_seen.push(p.regime);
        }
    }
    let report = OscillateReport { sweep, regimes_seen };
    write_json(&sc.output_dir.join("oscillate.json"), &report)?;
    Ok(report)
}
