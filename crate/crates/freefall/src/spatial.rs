//! Quaternion, rotation matrix and Euler angle algebra.
//!
//! Quaternions are Hamilton, scalar first. `q.rotate(v)` is the active
//! rotation `q v q*`, so a quaternion describing the orientation of frame B
//! inside frame A maps B coordinates into A coordinates.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Mul, Neg};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Distance from ±π/2 pitch at which Euler extraction is reported degenerate.
pub const GIMBAL_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Quat::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation of `angle` radians about a unit `axis`.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        let n = axis.normalize();
        Quat::new(c, s * n.x, s * n.y, s * n.z)
    }

    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, s, 0.0, 0.0)
    }

    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, 0.0, s, 0.0)
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, 0.0, 0.0, s)
    }

    pub fn conj(self) -> Self {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(self, o: Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn normalize(self) -> Self {
        let n = self.norm();
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn scale(self, k: f64) -> Self {
        Quat::new(self.w * k, self.x * k, self.y * k, self.z * k)
    }

    pub fn add(self, o: Quat) -> Self {
        Quat::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn vec(self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    /// Hamilton product `self ⊗ o`.
    pub fn mul(self, o: Quat) -> Quat {
        Quat::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    /// `q v q*` without building the pure quaternion.
    pub fn rotate(self, v: &Vec3) -> Vec3 {
        let u = self.vec();
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    /// Inverse rotation `q* v q`.
    pub fn rotate_inv(self, v: &Vec3) -> Vec3 {
        self.conj().rotate(v)
    }

    /// Direction cosine matrix with `dcm() * v == rotate(v)`.
    pub fn dcm(self) -> Mat3 {
        let Quat { w, x, y, z } = self;
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Angular distance-like measure insensitive to the double cover.
    pub fn distance(self, o: Quat) -> f64 {
        let d = self.dot(o);
        let s = if d < 0.0 { -1.0 } else { 1.0 };
        let dq = Quat::new(self.w - s * o.w, self.x - s * o.x, self.y - s * o.y, self.z - s * o.z);
        dq.norm()
    }

    /// Spherical linear interpolation, shortest arc.
    pub fn slerp(self, o: Quat, t: f64) -> Quat {
        let mut d = self.dot(o);
        let mut b = o;
        if d < 0.0 {
            d = -d;
            b = -o;
        }
        if d > 1.0 - 1e-12 {
            return self.scale(1.0 - t).add(b.scale(t)).normalize();
        }
        let th = d.acos();
        let s = th.sin();
        let ka = ((1.0 - t) * th).sin() / s;
        let kb = (t * th).sin() / s;
        self.scale(ka).add(b.scale(kb)).normalize()
    }

    /// Mirror through the body sagittal plane (x → −x).
    pub fn mirror_x(self) -> Quat {
        Quat::new(self.w, self.x, -self.y, -self.z)
    }

    /// Rotation angle in [0, π].
    pub fn angle(self) -> f64 {
        2.0 * self.vec().norm().atan2(self.w.abs())
    }
}

impl Mul for Quat {
    type Output = Quat;
    fn mul(self, o: Quat) -> Quat {
        Quat::mul(self, o)
    }
}

impl Neg for Quat {
    type Output = Quat;
    fn neg(self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }
}

/// Z-Y-X Euler angles: yaw ψ about Z, then pitch θ about Y, then roll φ about X.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerZYX {
    pub psi: f64,
    pub theta: f64,
    pub phi: f64,
}

impl EulerZYX {
    pub fn new(psi: f64, theta: f64, phi: f64) -> Self {
        EulerZYX { psi, theta, phi }
    }

    pub fn to_quat(self) -> Quat {
        Quat::rot_z(self.psi) * Quat::rot_y(self.theta) * Quat::rot_x(self.phi)
    }

    pub fn dcm(self) -> Mat3 {
        let (sps, cps) = self.psi.sin_cos();
        let (sth, cth) = self.theta.sin_cos();
        let (sph, cph) = self.phi.sin_cos();
        let rz = Mat3::new(cps, -sps, 0.0, sps, cps, 0.0, 0.0, 0.0, 1.0);
        let ry = Mat3::new(cth, 0.0, sth, 0.0, 1.0, 0.0, -sth, 0.0, cth);
        let rx = Mat3::new(1.0, 0.0, 0.0, 0.0, cph, -sph, 0.0, sph, cph);
        rz * ry * rx
    }
}

/// Result of an Euler extraction; `degenerate` marks gimbal lock.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerExtract {
    pub angles: EulerZYX,
    pub degenerate: bool,
}

pub fn quat_mul(a: Quat, b: Quat) -> Quat {
    a * b
}

pub fn rotate_vec(q: Quat, v: &Vec3) -> Vec3 {
    q.rotate(v)
}

pub fn quat_to_euler(q: Quat) -> EulerExtract {
    let Quat { w: q0, x: q1, y: q2, z: q3 } = q;
    let psi = (2.0 * (q0 * q3 + q1 * q2)).atan2(1.0 - 2.0 * (q2 * q2 + q3 * q3));
    let s = (2.0 * (q0 * q2 - q1 * q3)).clamp(-1.0, 1.0);
    let theta = s.asin();
    let phi = (2.0 * (q0 * q1 + q3 * q2)).atan2(1.0 - 2.0 * (q2 * q2 + q1 * q1));
    EulerExtract {
        angles: EulerZYX { psi, theta, phi },
        degenerate: (FRAC_PI_2 - theta.abs()) < GIMBAL_EPS,
    }
}

pub fn euler_to_quat(e: EulerZYX) -> Quat {
    e.to_quat()
}

/// Body to wind rotation: α about X, then −β about Y.
pub fn wind_quat(alpha: f64, beta: f64) -> Quat {
    let a = Quat::new((alpha / 2.0).cos(), (alpha / 2.0).sin(), 0.0, 0.0);
    let b = Quat::new((-beta / 2.0).cos(), 0.0, (-beta / 2.0).sin(), 0.0);
    a * b
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Wrap to (−π, π].
pub fn wrap_pi(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ninety_about_z_permutes_axes() {
        let q = Quat::rot_z(FRAC_PI_2);
        let v = q.rotate(&Vec3::new(1.0, 0.0, 0.0));
        assert!((v - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn two_quarter_turns_make_half_turn() {
        let q = Quat::rot_z(FRAC_PI_2) * Quat::rot_z(FRAC_PI_2);
        let dcm = EulerZYX::new(FRAC_PI_2, 0.0, 0.0).dcm() * EulerZYX::new(FRAC_PI_2, 0.0, 0.0).dcm();
        assert!((q.dcm() - dcm).norm() < 1e-12);
        assert!(q.distance(Quat::rot_z(PI)) < 1e-12);
    }

    #[test]
    fn pure_yaw_extracts() {
        let e = quat_to_euler(Quat::rot_z(30f64.to_radians())).angles;
        assert!((e.psi - 30f64.to_radians()).abs() < 1e-12);
        assert!(e.theta.abs() < 1e-12 && e.phi.abs() < 1e-12);
    }

    #[test]
    fn gimbal_is_flagged() {
        let q = EulerZYX::new(0.3, FRAC_PI_2, 0.1).to_quat();
        assert!(quat_to_euler(q).degenerate);
        assert!(!quat_to_euler(Quat::rot_y(1.0)).degenerate);
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_pi(PI), PI);
        assert!((wrap_pi(-PI) - PI).abs() < 1e-15);
        assert!((wrap_pi(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
    }
}
