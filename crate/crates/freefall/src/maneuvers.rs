//! Scripted maneuvers: layouts, oscillation sweeps and synthetic tracks.

use crate::aero::{ConsciousInput, InputGroups};
use crate::body::{forward_chain, Posture, Seg};
use crate::dynamics::{trim, DynamicsError, Frame, MassRates, Plant, SkydiverState};
use crate::ingest::MeasurementTrack;
use crate::estimator::{attitude_angles, observe, MeasurementProfile};
use crate::spatial::{EulerZYX, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI, TAU};

/// Frame for the posture at `t` with mass rates from a central difference
/// of the posture schedule.
pub fn frame_from_schedule<F: Fn(f64) -> Posture>(plant: &Plant, posture: &F, t: f64) -> Frame {
    let dt = plant.cfg.dt;
    let p = posture(t);
    let a = forward_chain(&plant.model, &posture(t - dt));
    let b = forward_chain(&plant.model, &posture(t + dt));
    let rates = MassRates { r_dot: (b.r_cg - a.r_cg) / (2.0 * dt), i_dot: (b.inertia - a.inertia) / (2.0 * dt) };
    plant.frame(&p, rates, None)
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Angle between the dorsal axis and the vertical: 0 when level belly-down.
pub fn level_error(s: &SkydiverState) -> f64 {
    s.q.rotate(&Vec3::y()).z.clamp(-1.0, 1.0).acos()
}

/// Elevation of the head axis above the horizon.
pub fn body_pitch(s: &SkydiverState) -> f64 {
    let z = s.q.rotate(&Vec3::z());
    z.z.atan2((z.x * z.x + z.y * z.y).sqrt())
}

// ------------------------------------------------------------------ layout

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    /// Head goes down first.
    Front,
    /// Head goes up first.
    Back,
}

impl LayoutKind {
    /// Sign of the body X rate during the flip.
    pub fn direction(self) -> f64 {
        match self {
            LayoutKind::Front => 1.0,
            LayoutKind::Back => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutTiming {
    pub prep_start: f64,
    pub onset: f64,
    /// Arms go back to default this long after onset; `None` keeps them out
    /// until the stop.
    pub arm_pulse: Option<f64>,
    pub arm_ramp: f64,
    /// Accumulated pitch rotation that triggers the stop, degrees.
    pub stop_rotation_deg: f64,
    pub arm_return: f64,
    pub duration: f64,
}

impl Default for LayoutTiming {
    fn default() -> Self {
        LayoutTiming {
            prep_start: 1.0,
            onset: 3.0,
            arm_pulse: None,
            arm_ramp: 0.2,
            stop_rotation_deg: 300.0,
            arm_return: 1.0,
            duration: 30.0,
        }
    }
}

pub const LAYOUT_DAMP_HIGH: f64 = 12.0;
pub const LAYOUT_DAMP_LOW: f64 = -0.1;
pub const LAYOUT_ARMS_OUT: f64 = FRAC_PI_2;
pub const LAYOUT_LEVEL_TOL: f64 = 20.0 * PI / 180.0;

#[derive(Clone, Debug, Serialize)]
pub struct LayoutSample {
    pub t: f64,
    pub state: SkydiverState,
    pub arms: f64,
    pub in_pitch: f64,
    pub cd_pitch: f64,
    pub rotation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LayoutRun {
    pub kind: LayoutKind,
    pub timing: LayoutTiming,
    pub hold_damping: bool,
    pub samples: Vec<LayoutSample>,
    pub stop_time: Option<f64>,
    /// Accumulated rotation about body X at the end, rad.
    pub rotation: f64,
    pub final_level_error: f64,
    pub completed: bool,
}

/// Straight body, arms abducted by `arms`.
pub fn straight_posture(arms: f64) -> Posture {
    let mut p = Posture::zero();
    p.set_sym(Seg::UpperArmR, EulerZYX::new(0.0, arms, 0.0));
    p
}

/// Arm abduction along a layout schedule, given the stop time if reached.
pub fn layout_arms(tm: &LayoutTiming, t: f64, stop: Option<f64>) -> f64 {
    if t < tm.onset {
        return 0.0;
    }
    let out = smoothstep((t - tm.onset) / tm.arm_ramp);
    let back_from = match (tm.arm_pulse, stop) {
        (Some(p), Some(st)) => (tm.onset + p).min(st),
        (Some(p), None) => tm.onset + p,
        (None, Some(st)) => st,
        (None, None) => f64::INFINITY,
    };
    if t < back_from {
        return LAYOUT_ARMS_OUT * out;
    }
    let ramp = if stop == Some(back_from) { tm.arm_return } else { tm.arm_ramp };
    LAYOUT_ARMS_OUT * out * (1.0 - smoothstep((t - back_from) / ramp))
}

pub fn layout_plant(plant: &Plant) -> Plant {
    let mut p = plant.clone();
    p.groups = InputGroups::legs_pitch();
    p
}

/// Single layout attempt with a fixed schedule. Preparation applies the
/// pitch input through the legs with high damping, onset releases it and
/// moves the arms out, the transition runs with negative damping and the
/// stop restores high damping once the rotation has gone far enough.
pub fn run_layout(plant: &Plant, kind: LayoutKind, timing: &LayoutTiming, hold_damping: bool) -> Result<LayoutRun, DynamicsError> {
    let plant = layout_plant(plant);
    let tr = trim(&plant, &straight_posture(0.0))?;
    let dt = plant.cfg.dt;
    let n = (timing.duration / dt).round() as usize;
    let mut s = tr.state();
    let mut rotation = 0.0f64;
    let mut stop_time: Option<f64> = None;
    let mut samples = Vec::with_capacity(n + 1);
    let tm = *timing;
    let arms_at = |t: f64, stop: Option<f64>| if hold_damping { 0.0 } else { layout_arms(&tm, t, stop) };
    for k in 0..=n {
        let t = k as f64 * dt;
        let mut u = ConsciousInput::baseline();
        u.cd_pitch = LAYOUT_DAMP_HIGH;
        if t >= tm.prep_start && t < tm.onset {
            u.in_pitch = 1.0;
        }
        if !hold_damping && t >= tm.onset && stop_time.is_none() {
            if rotation.abs() >= tm.stop_rotation_deg.to_radians() {
                stop_time = Some(t);
            } else {
                u.cd_pitch = LAYOUT_DAMP_LOW;
            }
        }
        let st = stop_time;
        let arms = arms_at(t, st);
        samples.push(LayoutSample { t, state: s, arms, in_pitch: u.in_pitch, cd_pitch: u.cd_pitch, rotation });
        if k == n {
            break;
        }
        let frame = frame_from_schedule(&plant, &|tt: f64| straight_posture(arms_at(tt, st)), t);
        s = plant.step(&s, &frame, &u, t)?;
        rotation += s.omega.x * dt;
    }
    let final_level_error = level_error(&s);
    let completed = rotation * kind.direction() >= TAU - LAYOUT_LEVEL_TOL && final_level_error <= LAYOUT_LEVEL_TOL;
    Ok(LayoutRun { kind, timing: *timing, hold_damping, samples, stop_time, rotation, final_level_error, completed })
}

/// Candidate schedules, tried in order until one flips the requested way.
pub fn layout_timings(kind: LayoutKind) -> Vec<LayoutTiming> {
    let base = LayoutTiming::default();
    let pulses: Vec<Option<f64>> = match kind {
        LayoutKind::Back => vec![None, Some(2.0), Some(1.0), Some(0.5), Some(0.25)],
        LayoutKind::Front => vec![Some(0.25), Some(1.0), Some(1.5), Some(2.0), Some(0.5), None],
    };
    let mut out = Vec::new();
    for onset in [3.0, 2.0, 4.0] {
        for p in &pulses {
            out.push(LayoutTiming { onset, arm_pulse: *p, ..base });
        }
    }
    out
}

/// Layout with the first candidate timing that completes in the requested
/// sense. When none does, the last attempt is returned with `completed` false.
pub fn layout(plant: &Plant, kind: LayoutKind, timing: Option<LayoutTiming>, hold_damping: bool) -> Result<LayoutRun, DynamicsError> {
    if let Some(t) = timing {
        return run_layout(plant, kind, &t, hold_damping);
    }
    if hold_damping {
        return run_layout(plant, kind, &LayoutTiming::default(), true);
    }
    let mut last = None;
    for t in layout_timings(kind) {
        let run = run_layout(plant, kind, &t, false)?;
        if run.completed {
            return Ok(run);
        }
        last = Some(run);
    }
    Ok(last.expect("non-empty timing list"))
}

// ------------------------------------------------------------- oscillation

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OscMode {
    /// Both arms rotate down.
    Pitch,
    /// Right arm and right leg move down.
    Roll,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Decaying,
    Sustained,
    Growing,
}

/// Relative amplitude change over the last ten cycles that still counts as
/// sustained.
pub const SUSTAINED_TOL: f64 = 0.10;
pub const OSC_CYCLES: usize = 10;

#[derive(Clone, Debug, Serialize)]
pub struct OscRun {
    pub damping: f64,
    pub shoulder: f64,
    pub t: Vec<f64>,
    /// Oscillating angle: body pitch or roll.
    pub angle: Vec<f64>,
    /// Half-swing amplitudes, rad.
    pub amplitudes: Vec<f64>,
    /// Amplitude over the last ten cycles, last / first.
    pub ratio: f64,
    /// (max − min) / mean of the amplitude over the last ten cycles.
    pub variation: f64,
    pub regime: Regime,
    pub tumbled: bool,
}

pub fn oscillation_posture(base: &Posture, mode: OscMode, shoulder: f64) -> Posture {
    let mut p = base.clone();
    let e = base.euler();
    let bump = |p: &mut Posture, s: Seg, sym: bool| {
        let a = e[s.joint().unwrap()];
        let ne = EulerZYX::new(a.psi, a.theta, a.phi + shoulder);
        if sym {
            p.set_sym(s, ne);
        } else {
            p.set_euler(s, ne);
        }
    };
    match mode {
        OscMode::Pitch => bump(&mut p, Seg::UpperArmR, true),
        OscMode::Roll => {
            bump(&mut p, Seg::UpperArmR, false);
            bump(&mut p, Seg::UpperLegR, false);
        }
    }
    p
}

fn half_swings(x: &[f64]) -> Vec<f64> {
    let mut ext = Vec::new();
    for k in 1..x.len().saturating_sub(1) {
        let (a, b, c) = (x[k - 1], x[k], x[k + 1]);
        if (b > a && b >= c) || (b < a && b <= c) {
            ext.push(b);
        }
    }
    ext.windows(2).map(|w| 0.5 * (w[1] - w[0]).abs()).collect()
}

/// Step the arms (or arm and leg) from the trimmed neutral pose and track
/// the resulting oscillation with the given damping on the oscillating axis.
pub fn oscillation_run(plant: &Plant, mode: OscMode, damping: f64, shoulder: f64, duration: f64) -> Result<OscRun, DynamicsError> {
    let measured = Posture::neutral(0.5);
    let tr = trim(plant, &measured)?;
    let base = tr.posture(&measured);
    let p = oscillation_posture(&base, mode, shoulder);
    let frame = plant.static_frame(&p);
    let mut u = ConsciousInput::baseline();
    match mode {
        OscMode::Pitch => u.cd_pitch = damping,
        OscMode::Roll => u.cd_roll = damping,
    }
    let dt = plant.cfg.dt;
    let n = (duration / dt).round() as usize;
    let mut s = tr.state();
    let (mut t, mut angle) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut tumbled = false;
    let mut held = 0.0;
    for k in 0..n {
        s = plant.step(&s, &frame, &u, k as f64 * dt)?;
        let a = match mode {
            OscMode::Pitch => body_pitch(&s),
            OscMode::Roll => {
                let (h, _, r) = attitude_angles(s.q, held);
                held = h;
                r
            }
        };
        if level_error(&s) > FRAC_PI_2 {
            tumbled = true;
        }
        t.push((k + 1) as f64 * dt);
        angle.push(a);
    }
    let amplitudes = half_swings(&angle);
    let w = 2 * OSC_CYCLES;
    let ratio = if amplitudes.len() > w {
        let m = amplitudes.len();
        // pair successive half swings so a static offset does not alias
        let last = 0.5 * (amplitudes[m - 1] + amplitudes[m - 2]);
        let first = 0.5 * (amplitudes[m - w] + amplitudes[m - w - 1]);
        if first > 0.0 {
            last / first
        } else {
            0.0
        }
    } else {
        0.0
    };
    let variation = if amplitudes.len() >= w {
        let tail: Vec<f64> = amplitudes[amplitudes.len() - w..].chunks(2).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), a| (l.min(*a), h.max(*a)));
        if mean > 0.0 {
            (hi - lo) / mean
        } else {
            f64::INFINITY
        }
    } else {
        f64::INFINITY
    };
    let regime = if tumbled || ratio > 1.0 + SUSTAINED_TOL {
        Regime::Growing
    } else if ratio < 1.0 - SUSTAINED_TOL {
        Regime::Decaying
    } else {
        Regime::Sustained
    };
    Ok(OscRun { damping, shoulder, t, angle, amplitudes, ratio, variation, regime, tumbled })
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub damping: f64,
    pub shoulder: f64,
    pub ratio: f64,
    pub variation: f64,
    pub final_amplitude: f64,
    pub regime: Regime,
}

impl From<&OscRun> for SweepPoint {
    fn from(r: &OscRun) -> Self {
        SweepPoint {
            damping: r.damping,
            shoulder: r.shoulder,
            ratio: r.ratio,
            variation: r.variation,
            final_amplitude: r.amplitudes.last().copied().unwrap_or(0.0),
            regime: r.regime,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Sweep {
    pub points: Vec<SweepPoint>,
    /// Shoulder angle where the amplitude neither grows nor decays.
    pub sustained: Option<SweepPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub mode: OscMode,
    pub dampings: Vec<f64>,
    pub shoulders: Vec<f64>,
    pub duration: f64,
    /// Damping used for the bisection on shoulder angle.
    pub bisect_damping: f64,
    pub bisect_iterations: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            mode: OscMode::Pitch,
            dampings: vec![0.2, 0.6, 1.0],
            shoulders: [10.0f64, 30.0, 60.0, 90.0].iter().map(|d| d.to_radians()).collect(),
            duration: 40.0,
            bisect_damping: 0.6,
            bisect_iterations: 12,
        }
    }
}

/// Grid sweep over damping and shoulder angle, then bisection on shoulder
/// angle at `bisect_damping` between a growing and a decaying point.
pub fn oscillation_sweep(plant: &Plant, cfg: &SweepConfig) -> Result<Sweep, DynamicsError> {
    use rayon::prelude::*;
    let grid: Vec<(f64, f64)> = cfg.dampings.iter().flat_map(|d| cfg.shoulders.iter().map(move |s| (*d, *s))).collect();
    let runs: Vec<Result<OscRun, DynamicsError>> =
        grid.par_iter().map(|(d, s)| oscillation_run(plant, cfg.mode, *d, *s, cfg.duration)).collect();
    let mut points = Vec::with_capacity(runs.len());
    for r in runs {
        points.push(SweepPoint::from(&r?));
    }
    let at = |s: f64| oscillation_run(plant, cfg.mode, cfg.bisect_damping, s, cfg.duration);
    let mut probes = Vec::with_capacity(cfg.shoulders.len());
    for s in &cfg.shoulders {
        probes.push(at(*s)?);
    }
    let growing = |r: &OscRun| r.tumbled || r.ratio > 1.0;
    let mut best: Option<OscRun> = probes.iter().filter(|r| !r.tumbled).min_by(|x, y| (x.ratio - 1.0).abs().total_cmp(&(y.ratio - 1.0).abs())).cloned();
    let bracket = probes.windows(2).find(|w| growing(&w[0]) != growing(&w[1])).map(|w| (w[0].clone(), w[1].clone()));
    if let Some((lo, hi)) = bracket {
        let up = growing(&lo);
        let (mut a, mut b) = (lo.shoulder, hi.shoulder);
        for _ in 0..cfg.bisect_iterations {
            if best.as_ref().is_some_and(|b| (b.ratio - 1.0).abs() < 0.01) {
                break;
            }
            let m = 0.5 * (a + b);
            let r = at(m)?;
            if !r.tumbled && best.as_ref().is_none_or(|bst| (r.ratio - 1.0).abs() < (bst.ratio - 1.0).abs()) {
                best = Some(r.clone());
            }
            if growing(&r) == up {
                a = m;
            } else {
                b = m;
            }
        }
    }
    let sustained = best.filter(|b| b.regime == Regime::Sustained).map(|b| SweepPoint::from(&b));
    Ok(Sweep { points, sustained })
}

// -------------------------------------------------------- synthetic tracks

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientStep {
    pub t: f64,
    pub input: ConsciousInput,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub duration: f64,
    /// Piecewise-constant coefficients; each entry holds from its `t`.
    pub schedule: Vec<CoefficientStep>,
    /// Limb sweep amplitude, rad.
    pub excitation: f64,
    pub noise: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let a = ConsciousInput { in_yaw: 0.8, in_pitch: 0.6, in_roll: 0.8, cd_yaw: 2.0, cd_pitch: 12.0, cd_roll: 6.0 };
        let b = ConsciousInput { cd_pitch: -0.1, ..a };
        SyntheticSpec {
            duration: 30.0,
            schedule: vec![CoefficientStep { t: 0.0, input: a }, CoefficientStep { t: 20.0, input: b }],
            excitation: 0.5,
            noise: true,
        }
    }
}

impl SyntheticSpec {
    pub fn input_at(&self, t: f64) -> ConsciousInput {
        self.schedule.iter().rev().find(|s| s.t <= t).or(self.schedule.first()).map(|s| s.input).unwrap_or_else(ConsciousInput::baseline)
    }

    pub fn step_times(&self) -> Vec<f64> {
        self.schedule.iter().map(|s| s.t).collect()
    }
}

/// Neutral pose with slow asymmetric arm and leg sweeps, so every input
/// coefficient has a visible effect.
pub fn excitation_posture(base: &Posture, amp: f64, t: f64) -> Posture {
    let mut p = base.clone();
    let e = base.euler();
    let j = |s: Seg| e[s.joint().unwrap()];
    let (w1, w2, w3) = (TAU * 0.23, TAU * 0.31, TAU * 0.17);
    let set = |p: &mut Posture, s: Seg, dth: f64, dphi: f64| {
        let a = j(s);
        p.set_euler(s, EulerZYX::new(a.psi, a.theta + dth, a.phi + dphi));
    };
    set(&mut p, Seg::UpperArmR, amp * (w1 * t).sin(), 0.5 * amp * (w3 * t).sin());
    set(&mut p, Seg::UpperArmL, -amp * (w2 * t).sin(), 0.5 * amp * (w3 * t + 1.0).sin());
    let legs = amp * (TAU * 0.45 * t).sin();
    set(&mut p, Seg::UpperLegR, 0.0, legs + 0.5 * amp * (w2 * t + 0.5).sin());
    set(&mut p, Seg::UpperLegL, 0.0, legs + 0.5 * amp * (w1 * t + 2.0).sin());
    p
}

#[derive(Clone, Debug)]
pub struct SyntheticTrack {
    pub postures: Vec<Posture>,
    pub frames: Vec<Frame>,
    pub truth: Vec<SkydiverState>,
    pub inputs: Vec<ConsciousInput>,
    pub measurements: MeasurementTrack,
    pub init: SkydiverState,
}

/// Simulate the excitation pattern under the scheduled coefficients and
/// sample the profile's channels, with seeded Gaussian noise at the
/// profile's standard deviations when `spec.noise` is set.
pub fn synthetic_track(plant: &Plant, spec: &SyntheticSpec, profile: &MeasurementProfile, seed: u64) -> Result<SyntheticTrack, DynamicsError> {
    let measured = Posture::neutral(0.5);
    let tr = trim(plant, &measured)?;
    let base = tr.posture(&measured);
    let dt = plant.cfg.dt;
    let n = (spec.duration / dt).round() as usize;
    let postures: Vec<Posture> = (0..=n)
        .map(|k| {
            let t = k as f64 * dt;
            let mut p = excitation_posture(&base, spec.excitation, t);
            p.t = t;
            p
        })
        .collect();
    let frames: Vec<Frame> = (0..n)
        .map(|k| frame_from_schedule(plant, &|t: f64| excitation_posture(&base, spec.excitation, t), k as f64 * dt))
        .collect();
    let inputs: Vec<ConsciousInput> = (0..=n).map(|k| spec.input_at(k as f64 * dt)).collect();
    let init = tr.state();
    let truth = plant.simulate(init, &frames, |k, _| inputs[k])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<Normal<f64>> = profile.r_std.iter().map(|s| Normal::new(0.0, *s).expect("positive std")).collect();
    let mut held = 0.0;
    let mut z = Vec::with_capacity(truth.len());
    for s in &truth {
        let mut zk = observe(s, &profile.channels, held);
        held = attitude_angles(s.q, held).0;
        if spec.noise {
            for (v, d) in zk.iter_mut().zip(&noise) {
                *v += d.sample(&mut rng);
            }
        }
        z.push(zk);
    }
    let measurements = MeasurementTrack { channels: profile.channels.clone(), t: (0..=n).map(|k| k as f64 * dt).collect(), z };
    Ok(SyntheticTrack { postures, frames, truth, inputs, measurements, init })
}
