//! Wind-relative angles and frame transformations.
//!
//! `u` is the unit velocity in body axes. The body-to-wind rotation maps the
//! wind Z axis onto `u`. Per-limb angles come in two forms: the Euler
//! extraction from the limb-to-wind quaternion, and the direction-vector
//! basis built from the flow direction in limb axes (the production path).

use crate::spatial::{wind_quat, Quat, Vec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_AIRSPEED: f64 = 1e-6;
pub const DEGENERATE_LIFT: f64 = 1e-9;
const EULER_GIMBAL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("undefined wind: airspeed {0:e} m/s")]
    UndefinedWind(f64),
}

/// Body angle of attack and sideslip.
pub fn body_wind_angles(v: &Vec3) -> Result<(f64, f64), KinematicsError> {
    let n = v.norm();
    if n < MIN_AIRSPEED {
        return Err(KinematicsError::UndefinedWind(n));
    }
    let alpha = if v.y == 0.0 && v.z == 0.0 { 0.0 } else { -v.y.atan2(v.z) };
    let beta = -(v.x / n).clamp(-1.0, 1.0).asin();
    Ok((alpha, beta))
}

/// Unit velocity from (α, β); inverse of [`body_wind_angles`].
pub fn unit_from_angles(alpha: f64, beta: f64) -> Vec3 {
    Vec3::new(-beta.sin(), -alpha.sin() * beta.cos(), alpha.cos() * beta.cos())
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaNumerator {
    /// 2(q0q1 − q2q3), the X-Y-Z extraction consistent with β_i and γ_i.
    #[default]
    Consistent,
    /// 2(q0q3 − q1q2), the same numerator as γ_i.
    Printed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LimbEuler {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub degenerate: bool,
}

/// `q_limb` is the limb orientation in body axes (limb → body).
pub fn limb_wind_angles_euler(q_limb: Quat, alpha: f64, beta: f64, num: AlphaNumerator) -> LimbEuler {
    // body → limb, then the body → wind rotation
    let q = q_limb.conj() * wind_quat(alpha, beta);
    let Quat { w: q0, x: q1, y: q2, z: q3 } = q;
    let an = match num {
        AlphaNumerator::Consistent => 2.0 * (q0 * q1 - q2 * q3),
        AlphaNumerator::Printed => 2.0 * (q0 * q3 - q1 * q2),
    };
    let s = 2.0 * (q0 * q2 + q1 * q3);
    LimbEuler {
        alpha: an.atan2(q0 * q0 - q1 * q1 - q2 * q2 + q3 * q3),
        beta: -s.clamp(-1.0, 1.0).asin(),
        gamma: (2.0 * (q0 * q3 - q1 * q2)).atan2(q0 * q0 - q2 * q2 - q3 * q3 + q1 * q1),
        degenerate: s.abs() >= 1.0 - EULER_GIMBAL,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaCondition {
    /// Flip n_β when the y component of n_α is negative. Not mirror
    /// symmetric: left and right limbs get opposite β lift.
    NAlphaY,
    /// Flip n_β when its own y component is negative.
    #[default]
    NBetaY,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LimbWindBasis {
    pub v: Vec3,
    pub alpha_abs: f64,
    pub beta_abs: f64,
    pub n_alpha: Vec3,
    pub n_beta: Vec3,
    pub m_alpha: Vec3,
    pub m_beta: Vec3,
    pub cond_alpha: bool,
    pub cond_beta: bool,
    pub alpha_degenerate: bool,
    pub beta_degenerate: bool,
}

fn unit_or_zero(a: Vec3) -> (Vec3, bool) {
    let n = a.norm();
    if n < DEGENERATE_LIFT {
        (Vec3::zeros(), true)
    } else {
        (a / n, false)
    }
}

/// Flow direction basis in limb axes for a limb with orientation `q_limb`.
pub fn limb_wind_basis(q_limb: Quat, u_body: &Vec3, cond: BetaCondition) -> LimbWindBasis {
    let v = q_limb.rotate_inv(u_body).normalize();
    let z = Vec3::z();
    let x = Vec3::x();
    let alpha_abs = v.z.clamp(-1.0, 1.0).acos();
    let beta_abs = v.x.clamp(-1.0, 1.0).acos();
    let (mut na, alpha_degenerate) = unit_or_zero(v.cross(&v.cross(&z)));
    let (mut nb, beta_degenerate) = unit_or_zero(v.cross(&v.cross(&x)));
    let half = std::f64::consts::FRAC_PI_2;
    let acz = na.z.clamp(-1.0, 1.0).acos();
    let cond_alpha = !alpha_degenerate && ((alpha_abs > half && acz < half) || (alpha_abs < half && acz > half));
    if cond_alpha {
        na = -na;
    }
    let cond_beta = !beta_degenerate
        && match cond {
            BetaCondition::NAlphaY => na.y < 0.0,
            BetaCondition::NBetaY => nb.y < 0.0,
        };
    if cond_beta {
        nb = -nb;
    }
    let ma = unit_or_zero(v.cross(&na)).0;
    let mb = unit_or_zero(v.cross(&nb)).0;
    LimbWindBasis {
        v,
        alpha_abs,
        beta_abs,
        n_alpha: na,
        n_beta: nb,
        m_alpha: ma,
        m_beta: mb,
        cond_alpha,
        cond_beta,
        alpha_degenerate,
        beta_degenerate,
    }
}
