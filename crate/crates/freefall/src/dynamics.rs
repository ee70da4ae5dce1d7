//! Newton-Euler rigid-body equations with a moving center of gravity,
//! attitude propagation and the belly-to-earth trim solver.

use crate::aero::{total_aero, AeroConfig, AeroContext, AeroOutput, ConsciousInput, InputGroups};
use crate::body::{forward_chain, mass_derivatives, BodyError, BodyModel, MassState, Posture, Seg, DERIVATIVE_SETTLE_S, GRAVITY};
use crate::spatial::{skew, EulerZYX, Mat3, Quat, Vec3};
use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

pub const DEFAULT_DT: f64 = 1.0 / 240.0;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("singular mass matrix")]
    Singular,
    #[error("divergence at t = {t:.4} s: {dump}")]
    Divergence { t: f64, dump: String },
    #[error("trim failed after {iterations} iterations, residual {residual:?}")]
    TrimFailure { iterations: usize, residual: [f64; 3] },
    #[error(transparent)]
    Body(#[from] BodyError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkydiverState {
    /// Body to inertial rotation.
    pub q: Quat,
    pub v: Vec3,
    pub omega: Vec3,
    /// Inertial position, North-West-Up.
    pub pos: Vec3,
}

impl SkydiverState {
    pub fn is_finite(&self) -> bool {
        self.q.is_finite() && self.v.iter().chain(self.omega.iter()).chain(self.pos.iter()).all(|x| x.is_finite())
    }

    /// Belly-down, level, falling at `speed` with body pitch `alpha`.
    pub fn falling(speed: f64, alpha: f64) -> Self {
        SkydiverState {
            q: Quat::rot_x(std::f64::consts::PI - alpha),
            v: speed * Vec3::new(0.0, -alpha.sin(), alpha.cos()),
            omega: Vec3::zeros(),
            pos: Vec3::zeros(),
        }
    }

    pub fn inertial_velocity(&self) -> Vec3 {
        self.q.rotate(&self.v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct MassRates {
    pub r_dot: Vec3,
    pub i_dot: Mat3,
}

/// Solve the coupled force and moment equations for (V̇, Ω̇).
pub fn accel(state: &SkydiverState, mass: &MassState, rates: &MassRates, f: &Vec3, m: &Vec3) -> Result<(Vec3, Vec3), DynamicsError> {
    let mm = mass.mass;
    let r = mass.r_cg;
    let (v, w) = (state.v, state.omega);
    let rx = skew(&r);
    let mut a = Matrix6::<f64>::zeros();
    a.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Matrix3::identity() * mm));
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-mm * rx));
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(mm * rx));
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(&mass.inertia);
    let p = mm * v + mm * w.cross(&r);
    let bf = f - mm * w.cross(&rates.r_dot) - w.cross(&p);
    let bm = m
        - rates.i_dot * w
        - rates.r_dot.cross(&(mm * v))
        - v.cross(&(mm * w.cross(&r)))
        - w.cross(&(mass.inertia * w))
        - w.cross(&r.cross(&(mm * v)));
    let b = Vector6::new(bf.x, bf.y, bf.z, bm.x, bm.y, bm.z);
    let x = a.lu().solve(&b).ok_or(DynamicsError::Singular)?;
    Ok((Vector3::new(x[0], x[1], x[2]), Vector3::new(x[3], x[4], x[5])))
}

/// ½ q ⊗ (0, Ω).
pub fn quat_rate(q: Quat, omega: &Vec3) -> Quat {
    (q * Quat::new(0.0, omega.x, omega.y, omega.z)).scale(0.5)
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Rk2,
    Rk4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub integrator: Integrator,
    pub gravity: f64,
    pub aero: AeroConfig,
    pub derivative_settle: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: DEFAULT_DT,
            integrator: Integrator::Rk2,
            gravity: GRAVITY,
            aero: AeroConfig::default(),
            derivative_settle: DERIVATIVE_SETTLE_S,
        }
    }
}

/// Mass properties and arch factor for one posture sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub mass: MassState,
    pub rates: MassRates,
    pub f_arch: f64,
}

#[derive(Clone, Debug)]
pub struct Plant {
    pub model: BodyModel,
    pub cfg: SimConfig,
    pub groups: InputGroups,
}

#[derive(Clone, Copy, Debug)]
struct Deriv {
    q: Quat,
    v: Vec3,
    w: Vec3,
    pos: Vec3,
}

impl Plant {
    pub fn new(model: BodyModel, cfg: SimConfig, groups: InputGroups) -> Self {
        Plant { model, cfg, groups }
    }

    pub fn nominal() -> Self {
        Plant::new(BodyModel::nominal(), SimConfig::default(), InputGroups::back_track())
    }

    pub fn frame(&self, posture: &Posture, rates: MassRates, pattern_arch: Option<f64>) -> Frame {
        let mass = forward_chain(&self.model, posture);
        let f_arch = AeroContext::new(&self.model, &mass, &self.cfg.aero, &self.groups, pattern_arch).f_arch;
        Frame { mass, rates, f_arch }
    }

    /// Static frame with zero mass rates.
    pub fn static_frame(&self, posture: &Posture) -> Frame {
        self.frame(posture, MassRates::default(), None)
    }

    /// Frames for a uniformly sampled posture stream at `cfg.dt`, with
    /// filtered mass derivatives.
    pub fn track(&self, postures: &[Posture], pattern_arch: Option<&[f64]>) -> Result<Vec<Frame>, DynamicsError> {
        let masses: Vec<MassState> = postures.iter().map(|p| forward_chain(&self.model, p)).collect();
        let rates: Vec<(Vec3, Mat3)> = if masses.len() >= 3 {
            mass_derivatives(&masses, self.cfg.dt, self.cfg.derivative_settle)?
        } else {
            vec![(Vec3::zeros(), Mat3::zeros()); masses.len()]
        };
        Ok(masses
            .into_iter()
            .zip(rates)
            .enumerate()
            .map(|(k, (mass, (r_dot, i_dot)))| {
                let pa = pattern_arch.map(|a| a[k.min(a.len() - 1)]);
                let f_arch = AeroContext::new(&self.model, &mass, &self.cfg.aero, &self.groups, pa).f_arch;
                Frame { mass, rates: MassRates { r_dot, i_dot }, f_arch }
            })
            .collect())
    }

    pub fn context<'a>(&'a self, frame: &'a Frame) -> AeroContext<'a> {
        AeroContext {
            model: &self.model,
            mass: &frame.mass,
            cfg: &self.cfg.aero,
            groups: &self.groups,
            f_arch: frame.f_arch,
            gravity: self.cfg.gravity,
        }
    }

    pub fn loads(&self, s: &SkydiverState, frame: &Frame, input: &ConsciousInput) -> AeroOutput {
        total_aero(&self.context(frame), s.q, &s.v, &s.omega, input)
    }

    fn deriv(&self, s: &SkydiverState, frame: &Frame, input: &ConsciousInput) -> Result<Deriv, DynamicsError> {
        let out = self.loads(s, frame, input);
        let (vd, wd) = accel(s, &frame.mass, &frame.rates, &out.force, &out.moment)?;
        Ok(Deriv { q: quat_rate(s.q, &s.omega), v: vd, w: wd, pos: s.q.rotate(&s.v) })
    }

    /// One fixed step with the posture held over the interval.
    pub fn step(&self, s: &SkydiverState, frame: &Frame, input: &ConsciousInput, t: f64) -> Result<SkydiverState, DynamicsError> {
        let dt = self.cfg.dt;
        let add = |s: &SkydiverState, d: &Deriv, h: f64| SkydiverState {
            q: s.q.add(d.q.scale(h)).normalize(),
            v: s.v + h * d.v,
            omega: s.omega + h * d.w,
            pos: s.pos + h * d.pos,
        };
        let next = match self.cfg.integrator {
            Integrator::Rk2 => {
                let k1 = self.deriv(s, frame, input)?;
                let k2 = self.deriv(&add(s, &k1, 0.5 * dt), frame, input)?;
                add(s, &k2, dt)
            }
            Integrator::Rk4 => {
                let k1 = self.deriv(s, frame, input)?;
                let k2 = self.deriv(&add(s, &k1, 0.5 * dt), frame, input)?;
                let k3 = self.deriv(&add(s, &k2, 0.5 * dt), frame, input)?;
                let k4 = self.deriv(&add(s, &k3, dt), frame, input)?;
                let d = Deriv {
                    q: k1.q.add(k2.q.scale(2.0)).add(k3.q.scale(2.0)).add(k4.q).scale(1.0 / 6.0),
                    v: (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v) / 6.0,
                    w: (k1.w + 2.0 * k2.w + 2.0 * k3.w + k4.w) / 6.0,
                    pos: (k1.pos + 2.0 * k2.pos + 2.0 * k3.pos + k4.pos) / 6.0,
                };
                add(s, &d, dt)
            }
        };
        if !next.is_finite() {
            return Err(DynamicsError::Divergence { t: t + dt, dump: format!("{s:?}") });
        }
        Ok(next)
    }

    /// Integrate over `frames`, one step per frame. `input(k)` supplies the
    /// coefficients for step k. Returns the states at every sample, starting
    /// with `init`.
    pub fn simulate<F>(&self, init: SkydiverState, frames: &[Frame], mut input: F) -> Result<Vec<SkydiverState>, DynamicsError>
    where
        F: FnMut(usize, &SkydiverState) -> ConsciousInput,
    {
        let mut out = Vec::with_capacity(frames.len() + 1);
        let mut s = init;
        out.push(s);
        for (k, f) in frames.iter().enumerate() {
            let u = input(k, &s);
            s = self.step(&s, f, &u, k as f64 * self.cfg.dt)?;
            out.push(s);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrimSolution {
    pub terminal_speed: f64,
    pub body_pitch: f64,
    pub knee_bend: f64,
    /// Normalized residuals: F_z/mg, F_y/mg, M_x/(mgH).
    pub residual: [f64; 3],
    pub iterations: usize,
}

impl TrimSolution {
    pub fn state(&self) -> SkydiverState {
        SkydiverState::falling(self.terminal_speed, self.body_pitch)
    }

    pub fn posture(&self, measured: &Posture) -> Posture {
        with_knee(measured, self.knee_bend)
    }
}

pub const TRIM_TOL: f64 = 1e-9;
pub const TRIM_MAX_ITER: usize = 200;

fn with_knee(p: &Posture, knee: f64) -> Posture {
    let mut p = p.clone();
    let e = crate::spatial::quat_to_euler(p.joint(Seg::LowerLegR)).angles;
    p.set_sym(Seg::LowerLegR, EulerZYX::new(e.psi, e.theta, knee));
    p
}

/// Residuals of the steady-fall condition at (speed, pitch, knee).
pub fn trim_residual(plant: &Plant, measured: &Posture, x: [f64; 3]) -> [f64; 3] {
    let p = with_knee(measured, x[2]);
    let frame = plant.static_frame(&p);
    let s = SkydiverState::falling(x[0], x[1]);
    let idle = ConsciousInput { in_yaw: 0.0, in_pitch: 0.0, in_roll: 0.0, ..ConsciousInput::baseline() };
    let out = plant.loads(&s, &frame, &idle);
    let w = frame.mass.mass * plant.cfg.gravity;
    [out.force.z / w, out.force.y / w, out.moment.x / (w * plant.model.height)]
}

/// Damped Newton solve from (60 m/s, 90°, 30°).
pub fn trim(plant: &Plant, measured: &Posture) -> Result<TrimSolution, DynamicsError> {
    trim_from(plant, measured, [60.0, FRAC_PI_2, 30f64.to_radians()])
}

pub fn trim_from(plant: &Plant, measured: &Posture, x0: [f64; 3]) -> Result<TrimSolution, DynamicsError> {
    let norm = |r: &[f64; 3]| (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    let mut x = x0;
    let mut r = trim_residual(plant, measured, x);
    let h = [1e-4, 1e-6, 1e-6];
    for it in 0..TRIM_MAX_ITER {
        if !r.iter().all(|v| v.is_finite()) {
            break;
        }
        if norm(&r) < TRIM_TOL {
            return Ok(TrimSolution { terminal_speed: x[0], body_pitch: x[1], knee_bend: x[2], residual: r, iterations: it });
        }
        let mut jac = Matrix3::<f64>::zeros();
        for c in 0..3 {
            let (mut xp, mut xm) = (x, x);
            xp[c] += h[c];
            xm[c] -= h[c];
            let (rp, rm) = (trim_residual(plant, measured, xp), trim_residual(plant, measured, xm));
            for k in 0..3 {
                jac[(k, c)] = (rp[k] - rm[k]) / (2.0 * h[c]);
            }
        }
        let Some(dx) = jac.lu().solve(&Vector3::from(r)) else { break };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let xn = [x[0] - lambda * dx[0], x[1] - lambda * dx[1], x[2] - lambda * dx[2]];
            if xn[0] > 0.0 {
                let rn = trim_residual(plant, measured, xn);
                if norm(&rn) < norm(&r) {
                    x = xn;
                    r = rn;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if norm(&r) < TRIM_TOL {
        return Ok(TrimSolution { terminal_speed: x[0], body_pitch: x[1], knee_bend: x[2], residual: r, iterations: TRIM_MAX_ITER });
    }
    Err(DynamicsError::TrimFailure { iterations: TRIM_MAX_ITER, residual: r })
}
