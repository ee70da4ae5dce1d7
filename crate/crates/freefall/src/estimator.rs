//! Unscented Kalman filter for the six conscious-control coefficients.
//!
//! The coefficients are held constant over a prediction window of `n_pred`
//! plant steps; each sigma point drives its own rollout from the shared
//! anchor state. After the update a single rollout over `n_solve` steps
//! advances the anchor.

use crate::aero::ConsciousInput;
use crate::dynamics::{DynamicsError, Frame, Plant, SkydiverState};
use crate::ingest::{lowpass, Channel, LowPassSpec, MeasurementTrack};
use crate::spatial::{wrap_pi, Quat, Vec3};
use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

pub const N_STATE: usize = 6;
pub const N_SIGMA: usize = 2 * N_STATE + 1;

pub type StateVec = SVector<f64, N_STATE>;
pub type StateMat = SMatrix<f64, N_STATE, N_STATE>;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("covariance not factorizable")]
    Factorization,
    #[error("invalid filter config: {0}")]
    Config(String),
    #[error("streams misaligned: {0}")]
    Misaligned(String),
    #[error("anchor rollout diverged at t = {0:.3} s")]
    Divergence(f64),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqrtMethod {
    /// Symmetric square root from the eigen decomposition, S·S = P.
    #[default]
    Symmetric,
    /// Lower Cholesky factor, L·Lᵀ = P.
    Cholesky,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QScaling {
    /// Q_diag · dt.
    #[default]
    Step,
    /// Q_diag · n_solve · dt.
    Window,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UkfConfig {
    pub q_diag: [f64; N_STATE],
    pub q_scaling: QScaling,
    pub dt: f64,
    pub w0: f64,
    pub n_pred: usize,
    pub n_solve: usize,
    pub bounds_min: [f64; N_STATE],
    pub bounds_max: [f64; N_STATE],
    pub k_reflect: f64,
    pub sqrt: SqrtMethod,
    pub x0: [f64; N_STATE],
    /// Initial standard deviations.
    pub p0_std: [f64; N_STATE],
}

impl Default for UkfConfig {
    fn default() -> Self {
        UkfConfig {
            q_diag: [0.25, 0.25, 0.25, 1.0, 1.0, 1.0],
            q_scaling: QScaling::Step,
            dt: crate::dynamics::DEFAULT_DT,
            w0: 0.5,
            n_pred: 60,
            n_solve: 12,
            bounds_min: [0.0, 0.0, 0.0, 0.01, 0.01, 0.01],
            bounds_max: [6.5, 6.5, 6.5, 24.0, 24.0, 24.0],
            k_reflect: 0.5,
            sqrt: SqrtMethod::Symmetric,
            x0: [0.0, 0.0, 0.0, 6.0, 6.0, 6.0],
            p0_std: [0.25, 0.25, 0.25, 6.0, 6.0, 6.0],
        }
    }
}

impl UkfConfig {
    /// Lower damping bound −0.25 for maneuvers with rotation-encouraging damping.
    pub fn with_negative_damping(mut self) -> Self {
        for j in 3..6 {
            self.bounds_min[j] = -0.25;
        }
        self
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        let err = |m: &str| Err(EstimatorError::Config(m.into()));
        if !(self.w0 > 0.0 && self.w0 < 1.0) {
            return err("w0 must lie in (0, 1)");
        }
        if self.n_pred == 0 || self.n_solve == 0 {
            return err("n_pred and n_solve must be at least 1");
        }
        if (0..N_STATE).any(|j| self.bounds_min[j] >= self.bounds_max[j]) {
            return err("bounds_min must be below bounds_max");
        }
        if !(self.dt > 0.0) {
            return err("dt must be positive");
        }
        Ok(())
    }

    pub fn q_matrix(&self) -> StateMat {
        let s = match self.q_scaling {
            QScaling::Step => self.dt,
            QScaling::Window => self.dt * self.n_solve as f64,
        };
        StateMat::from_diagonal(&StateVec::from(self.q_diag).scale(s))
    }

    pub fn weights(&self) -> [f64; N_SIGMA] {
        let mut w = [(1.0 - self.w0) / (2 * N_STATE) as f64; N_SIGMA];
        w[0] = self.w0;
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementProfile {
    pub name: String,
    pub channels: Vec<Channel>,
    /// Measurement noise standard deviations, one per channel.
    pub r_std: Vec<f64>,
}

impl MeasurementProfile {
    /// Horizontal velocity, heading, pitch and roll.
    pub fn tracking() -> Self {
        MeasurementProfile {
            name: "tracking".into(),
            channels: vec![Channel::VHor, Channel::Heading, Channel::Pitch, Channel::Roll],
            r_std: vec![0.1, 0.05, 0.01, 0.01],
        }
    }

    /// No GNSS: coarse heading, pitch and roll.
    pub fn transitions() -> Self {
        MeasurementProfile {
            name: "transitions".into(),
            channels: vec![Channel::Heading, Channel::Pitch, Channel::Roll],
            r_std: vec![1.5, 0.01, 0.01],
        }
    }

    pub fn turning() -> Self {
        MeasurementProfile {
            name: "turning".into(),
            channels: vec![Channel::YawRate, Channel::Pitch, Channel::Roll],
            r_std: vec![0.01, 0.01, 0.01],
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "tracking" => Some(Self::tracking()),
            "transitions" => Some(Self::transitions()),
            "turning" => Some(Self::turning()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        let m = self.channels.len();
        if !(3..=4).contains(&m) || self.r_std.len() != m || self.r_std.iter().any(|r| !(*r > 0.0)) {
            return Err(EstimatorError::Config(format!("profile {}: need 3 or 4 channels with positive R", self.name)));
        }
        Ok(())
    }

    pub fn r_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(self.r_std.len(), self.r_std.iter().map(|s| s * s)))
    }
}

/// Body axes seen in the capture inertial frame.
fn capture_axes(q: Quat) -> (Vec3, Vec3, Vec3) {
    let qz = Quat::new((PI / 4.0).cos(), 0.0, 0.0, -(PI / 4.0).sin());
    let r = qz * q;
    (r.rotate(&Vec3::x()), r.rotate(&Vec3::y()), r.rotate(&Vec3::z()))
}

const GIMBAL_DEN: f64 = 1e-12;

/// Heading, pitch and roll of the body in the capture frame. When the body
/// Z axis is vertical the heading is undefined and `held_heading` is returned.
pub fn attitude_angles(q: Quat, held_heading: f64) -> (f64, f64, f64) {
    let (x, y, z) = capture_axes(q);
    let hz = (z.x * z.x + z.y * z.y).sqrt();
    let (heading, pitch) = if hz < GIMBAL_DEN { (held_heading, FRAC_PI_2.copysign(z.z)) } else { (z.y.atan2(z.x), (z.z / hz).atan()) };
    let hx = (x.x * x.x + x.y * x.y).sqrt();
    let base = if hx < GIMBAL_DEN { FRAC_PI_2.copysign(x.z) } else { (x.z / hx).atan() };
    let sign = if y.z < 0.0 { -1.0 } else { 1.0 };
    let roll = sign * base + if y.z < 0.0 { PI } else { 0.0 };
    (heading, pitch, roll)
}

/// Rate of change of the heading angle implied by the body rates.
pub fn heading_rate(s: &SkydiverState) -> f64 {
    let (_, _, z) = capture_axes(s.q);
    let qz = Quat::new((PI / 4.0).cos(), 0.0, 0.0, -(PI / 4.0).sin());
    let zd = (qz * s.q).rotate(&s.omega.cross(&Vec3::z()));
    let h2 = z.x * z.x + z.y * z.y;
    if h2 < GIMBAL_DEN {
        return 0.0;
    }
    (z.x * zd.y - z.y * zd.x) / h2
}

pub fn observe(s: &SkydiverState, channels: &[Channel], held_heading: f64) -> Vec<f64> {
    let (heading, pitch, roll) = attitude_angles(s.q, held_heading);
    channels
        .iter()
        .map(|c| match c {
            Channel::VHor => {
                let vi = s.inertial_velocity();
                (vi.x * vi.x + vi.y * vi.y).sqrt()
            }
            Channel::Heading => heading,
            Channel::Pitch => pitch,
            Channel::Roll => roll,
            Channel::YawRate => heading_rate(s),
        })
        .collect()
}

/// Smoothed derivative of an unwrapped heading series.
pub fn yaw_rate_from_heading(heading: &[f64], dt: f64) -> Vec<f64> {
    let n = heading.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut un = Vec::with_capacity(n);
    un.push(heading[0]);
    for k in 1..n {
        let prev = un[k - 1];
        un.push(prev + wrap_pi(heading[k] - heading[k - 1]));
    }
    let d: Vec<f64> = (0..n)
        .map(|k| {
            if k == 0 {
                (un[1] - un[0]) / dt
            } else if k == n - 1 {
                (un[n - 1] - un[n - 2]) / dt
            } else {
                (un[k + 1] - un[k - 1]) / (2.0 * dt)
            }
        })
        .collect();
    lowpass(&d, &LowPassSpec { sample_rate: 1.0 / dt, ..LowPassSpec::default() })
}

pub fn matrix_sqrt(p: &StateMat, method: SqrtMethod) -> Result<StateMat, EstimatorError> {
    let p = 0.5 * (p + p.transpose());
    match method {
        SqrtMethod::Symmetric => {
            let e = p.symmetric_eigen();
            if e.eigenvalues.iter().any(|l| !l.is_finite()) {
                return Err(EstimatorError::Factorization);
            }
            let d = StateMat::from_diagonal(&e.eigenvalues.map(|l| l.max(0.0).sqrt()));
            Ok(e.eigenvectors * d * e.eigenvectors.transpose())
        }
        SqrtMethod::Cholesky => {
            if let Some(c) = p.cholesky() {
                return Ok(c.l());
            }
            let j = p + StateMat::identity() * 1e-12;
            j.cholesky().map(|c| c.l()).ok_or(EstimatorError::Factorization)
        }
    }
}

pub fn sigma_points(x: &StateVec, p: &StateMat, cfg: &UkfConfig) -> Result<([StateVec; N_SIGMA], [f64; N_SIGMA]), EstimatorError> {
    let s = matrix_sqrt(p, cfg.sqrt)?;
    let c = (N_STATE as f64 / (1.0 - cfg.w0)).sqrt();
    let mut pts = [*x; N_SIGMA];
    for j in 0..N_STATE {
        let col = s.column(j) * c;
        pts[1 + j] = x + col;
        pts[1 + N_STATE + j] = x - col;
    }
    Ok((pts, cfg.weights()))
}

/// Clamp to bounds. Where the anchor sits exactly on the violated bound the
/// element is reflected to the inside instead, so points stay distinct.
pub fn constrain(points: &mut [StateVec], anchor: &StateVec, cfg: &UkfConfig) {
    for p in points.iter_mut() {
        for j in 0..N_STATE {
            let (lo, hi, a) = (cfg.bounds_min[j], cfg.bounds_max[j], anchor[j]);
            if p[j] < lo {
                p[j] = if a == lo { a - cfg.k_reflect * (p[j] - a) } else { lo };
            } else if p[j] > hi {
                p[j] = if a == hi { a - cfg.k_reflect * (p[j] - a) } else { hi };
            }
            p[j] = p[j].clamp(lo, hi);
        }
    }
}

pub fn clamp_state(x: &mut StateVec, cfg: &UkfConfig) {
    for j in 0..N_STATE {
        x[j] = x[j].clamp(cfg.bounds_min[j], cfg.bounds_max[j]);
    }
}

#[derive(Clone, Debug)]
pub struct UkfState {
    pub x: StateVec,
    pub p: StateMat,
    pub skydiver: SkydiverState,
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub x_pred: StateVec,
    pub p_pred: StateMat,
    pub points: [StateVec; N_SIGMA],
    pub weights: [f64; N_SIGMA],
    pub states: Vec<SkydiverState>,
    pub z_i: Vec<DVector<f64>>,
    pub z_pred: DVector<f64>,
    /// Sigma points whose rollout diverged.
    pub diverged: Vec<usize>,
}

fn rollout(plant: &Plant, init: &SkydiverState, frames: &[Frame], x: &StateVec, t0: f64) -> Result<SkydiverState, DynamicsError> {
    let input = ConsciousInput::from_array(x.as_slice());
    let mut s = *init;
    for (k, f) in frames.iter().enumerate() {
        s = plant.step(&s, f, &input, t0 + k as f64 * plant.cfg.dt)?;
    }
    Ok(s)
}

/// Weighted mean with angle channels averaged around the first sample.
fn weighted_mean(z: &[DVector<f64>], w: &[f64], channels: &[Channel]) -> DVector<f64> {
    let mut m = z[0].clone();
    for (c, ch) in channels.iter().enumerate() {
        let acc: f64 = z.iter().zip(w).map(|(zi, wi)| wi * diff(zi[c] - z[0][c], ch)).sum();
        m[c] = z[0][c] + acc;
        if ch.is_angle() {
            m[c] = wrap_pi(m[c]);
        }
    }
    m
}

fn diff(d: f64, ch: &Channel) -> f64 {
    if ch.is_angle() {
        wrap_pi(d)
    } else {
        d
    }
}

fn residual(a: &DVector<f64>, b: &DVector<f64>, channels: &[Channel]) -> DVector<f64> {
    DVector::from_iterator(a.len(), channels.iter().enumerate().map(|(c, ch)| diff(a[c] - b[c], ch)))
}

pub fn predict(
    plant: &Plant,
    ukf: &UkfState,
    window: &[Frame],
    cfg: &UkfConfig,
    profile: &MeasurementProfile,
    t0: f64,
) -> Result<Prediction, EstimatorError> {
    let (mut points, weights) = sigma_points(&ukf.x, &ukf.p, cfg)?;
    constrain(&mut points, &ukf.x, cfg);
    let x_pred: StateVec = points.iter().zip(weights.iter()).map(|(p, w)| p * *w).sum();
    let mut p_pred = cfg.q_matrix();
    for (p, w) in points.iter().zip(weights.iter()) {
        let d = p - x_pred;
        p_pred += *w * d * d.transpose();
    }
    let results: Vec<Result<SkydiverState, DynamicsError>> =
        points.par_iter().map(|x| rollout(plant, &ukf.skydiver, window, x, t0)).collect();
    let anchor = match &results[0] {
        Ok(s) => *s,
        Err(_) => return Err(EstimatorError::Divergence(t0)),
    };
    let held = attitude_angles(ukf.skydiver.q, 0.0).0;
    let z_anchor = DVector::from_vec(observe(&anchor, &profile.channels, held));
    let mut diverged = Vec::new();
    let mut states = Vec::with_capacity(N_SIGMA);
    let mut z_i = Vec::with_capacity(N_SIGMA);
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => {
                z_i.push(DVector::from_vec(observe(&s, &profile.channels, held)));
                states.push(s);
            }
            Err(e) => {
                log::warn!("sigma point {i} diverged: {e}");
                diverged.push(i);
                z_i.push(z_anchor.clone());
                states.push(anchor);
            }
        }
    }
    let z_pred = weighted_mean(&z_i, &weights, &profile.channels);
    Ok(Prediction { x_pred, p_pred: 0.5 * (p_pred + p_pred.transpose()), points, weights, states, z_i, z_pred, diverged })
}

pub fn update(pred: &Prediction, z_meas: &DVector<f64>, cfg: &UkfConfig, profile: &MeasurementProfile) -> (StateVec, StateMat) {
    let m = profile.channels.len();
    let mut cz = profile.r_matrix();
    let mut cxz = DMatrix::<f64>::zeros(N_STATE, m);
    for i in 0..N_SIGMA {
        let dz = residual(&pred.z_i[i], &pred.z_pred, &profile.channels);
        let dx = pred.points[i] - pred.x_pred;
        let w = pred.weights[i];
        cz += w * &dz * dz.transpose();
        cxz += w * DVector::from_column_slice(dx.as_slice()) * dz.transpose();
    }
    let sv = cz.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= 0.0 || smax / smin > 1e12 {
        log::warn!("innovation covariance ill-conditioned, regularizing");
        cz += DMatrix::identity(m, m) * 1e-9;
    }
    let cz_inv = cz.clone().try_inverse().unwrap_or_else(|| DMatrix::identity(m, m) * 1e9);
    let k = &cxz * cz_inv;
    let innov = residual(z_meas, &pred.z_pred, &profile.channels);
    let dx = &k * innov;
    let mut x = pred.x_pred + StateVec::from_column_slice(dx.as_slice());
    clamp_state(&mut x, cfg);
    let kck = &k * &cz * k.transpose();
    let mut p = pred.p_pred - StateMat::from_column_slice(kck.as_slice());
    p = 0.5 * (p + p.transpose());
    (x, p)
}

/// Rollout with the updated coefficients over the solution window.
/// Returns every state after each step; the last one is the next anchor.
pub fn solve_window(plant: &Plant, anchor: &SkydiverState, x: &StateVec, frames: &[Frame], t0: f64) -> Result<Vec<SkydiverState>, DynamicsError> {
    let input = ConsciousInput::from_array(x.as_slice());
    let mut s = *anchor;
    let mut out = Vec::with_capacity(frames.len());
    for (k, f) in frames.iter().enumerate() {
        s = plant.step(&s, f, &input, t0 + k as f64 * plant.cfg.dt)?;
        out.push(s);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct ChannelRms {
    pub channel: String,
    pub rms: f64,
}

#[derive(Clone, Debug)]
pub struct Estimate {
    pub t: Vec<f64>,
    /// Coefficients in effect at each sample.
    pub x: Vec<[f64; N_STATE]>,
    pub std: Vec<[f64; N_STATE]>,
    /// Reconstructed trajectory, one state per sample.
    pub states: Vec<SkydiverState>,
    pub rms: Vec<ChannelRms>,
    pub diverged_points: usize,
    /// The run stopped early on a divergence; outputs cover what was reached.
    pub partial: bool,
}

/// Run the filter over a posture track and a measurement track sampled on
/// the same grid. `frames[k]` drives the step from sample k to k+1.
pub fn estimate_track(
    plant: &Plant,
    frames: &[Frame],
    meas: &MeasurementTrack,
    init: SkydiverState,
    cfg: &UkfConfig,
    profile: &MeasurementProfile,
) -> Result<Estimate, EstimatorError> {
    cfg.validate()?;
    profile.validate()?;
    let n = meas.t.len();
    if frames.len() + 1 < n {
        return Err(EstimatorError::Misaligned(format!("{} posture frames for {} measurement samples", frames.len(), n)));
    }
    if meas.channels != profile.channels {
        return Err(EstimatorError::Misaligned(format!("measurement channels {:?} differ from profile {:?}", meas.channels, profile.channels)));
    }
    if (plant.cfg.dt - cfg.dt).abs() > 1e-12 {
        return Err(EstimatorError::Misaligned("plant and filter dt differ".into()));
    }
    if n < 2 {
        return Err(EstimatorError::Misaligned("measurement track too short".into()));
    }
    let mut ukf = UkfState {
        x: StateVec::from(cfg.x0),
        p: StateMat::from_diagonal(&StateVec::from(cfg.p0_std).map(|s| s * s)),
        skydiver: init,
    };
    let std_of = |p: &StateMat| -> [f64; N_STATE] {
        let mut s = [0.0; N_STATE];
        for j in 0..N_STATE {
            s[j] = p[(j, j)].max(0.0).sqrt();
        }
        s
    };
    let mut out = Estimate {
        t: vec![meas.t[0]],
        x: vec![cfg.x0],
        std: vec![std_of(&ukf.p)],
        states: vec![init],
        rms: vec![],
        diverged_points: 0,
        partial: false,
    };
    let dt = cfg.dt;
    let mut k = 0;
    while k + 1 < n {
        let t0 = k as f64 * dt;
        if k + cfg.n_pred < n {
            let window = &frames[k..k + cfg.n_pred];
            match predict(plant, &ukf, window, cfg, profile, t0) {
                Ok(pred) => {
                    out.diverged_points += pred.diverged.len();
                    let z = DVector::from_row_slice(&meas.z[k + cfg.n_pred]);
                    let (x, p) = update(&pred, &z, cfg, profile);
                    ukf.x = x;
                    ukf.p = p;
                }
                Err(EstimatorError::Divergence(_)) => {
                    out.partial = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let len = cfg.n_solve.min(n - 1 - k);
        let states = match solve_window(plant, &ukf.skydiver, &ukf.x, &frames[k..k + len], t0) {
            Ok(s) => s,
            Err(_) => {
                out.partial = true;
                break;
            }
        };
        let xs: [f64; N_STATE] = ukf.x.into();
        let sd = std_of(&ukf.p);
        for (j, s) in states.iter().enumerate() {
            out.t.push(meas.t[k + j + 1]);
            out.x.push(xs);
            out.std.push(sd);
            out.states.push(*s);
        }
        ukf.skydiver = *states.last().unwrap();
        k += len;
    }
    out.rms = channel_rms(&out.states, meas, &profile.channels);
    Ok(out)
}

/// RMS of reconstruction minus measurement, per channel.
pub fn channel_rms(states: &[SkydiverState], meas: &MeasurementTrack, channels: &[Channel]) -> Vec<ChannelRms> {
    let m = states.len().min(meas.z.len());
    channels
        .iter()
        .enumerate()
        .map(|(c, ch)| {
            let mut acc = 0.0;
            let mut held = 0.0;
            for k in 0..m {
                let z = observe(&states[k], channels, held);
                held = attitude_angles(states[k].q, held).0;
                let d = diff(z[c] - meas.z[k][c], ch);
                acc += d * d;
            }
            ChannelRms { channel: ch.name().to_string(), rms: (acc / m.max(1) as f64).sqrt() }
        })
        .collect()
}
