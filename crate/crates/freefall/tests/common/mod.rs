//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use freefall::body::{BodyModel, Posture, Seg, Shape, N_SEG};
use freefall::spatial::{EulerZYX, Mat3, Quat, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform random joint angles inside comfortable anatomical ranges.
pub fn random_posture(rng: &mut impl Rng) -> Posture {
    let mut p = Posture::zero();
    for j in 0..p.joints.len() {
        let e = EulerZYX::new(rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2), rng.gen_range(-1.5..1.5));
        p.joints[j] = e.to_quat();
    }
    p
}

/// Same joint angle on both sides, mirrored.
pub fn random_symmetric_posture(rng: &mut impl Rng) -> Posture {
    let mut p = Posture::zero();
    for s in [Seg::Abdomen, Seg::Thorax, Seg::Head] {
        p.set_euler(s, EulerZYX::new(0.0, 0.0, rng.gen_range(-0.4..0.4)));
    }
    for s in [Seg::UpperArmR, Seg::ForearmR, Seg::HandR, Seg::UpperLegR, Seg::LowerLegR, Seg::FootR] {
        let e = EulerZYX::new(rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8));
        p.set_sym(s, e);
    }
    p
}

/// Point samples filling each solid uniformly, in the segment's local frame.
pub struct PointCloud {
    pub points: Vec<Vec<Vec3>>,
    pub masses: Vec<f64>,
}

fn inside(shape: &Shape, p: &Vec3) -> bool {
    match *shape {
        Shape::TruncatedCone { r_top, r_bottom, length } => {
            let r = r_top + (r_bottom - r_top) * p.z / length;
            p.x * p.x + p.y * p.y <= r * r
        }
        Shape::EllipticalCylinder { a, b, .. } => (p.x / a).powi(2) + (p.y / b).powi(2) <= 1.0,
        Shape::Ellipsoid { a, b, c } => (p.x / a).powi(2) + (p.y / b).powi(2) + ((p.z - c) / c).powi(2) <= 1.0,
    }
}

fn half_widths(shape: &Shape) -> (f64, f64) {
    match *shape {
        Shape::TruncatedCone { r_top, r_bottom, .. } => (r_top.max(r_bottom), r_top.max(r_bottom)),
        Shape::EllipticalCylinder { a, b, .. } => (a, b),
        Shape::Ellipsoid { a, b, .. } => (a, b),
    }
}

impl PointCloud {
    /// `n` points in total, shared out in proportion to segment mass so every
    /// point carries the same mass.
    pub fn new(model: &BodyModel, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(N_SEG);
        let mut masses = Vec::with_capacity(N_SEG);
        for sp in &model.segments {
            let k = ((n as f64) * sp.mass / model.total_mass).round().max(1.0) as usize;
            let (hx, hy) = half_widths(&sp.shape);
            let len = sp.shape.length();
            let o = Vec3::from(sp.shape_origin);
            let mut pts = Vec::with_capacity(k);
            while pts.len() < k {
                let p = Vec3::new(rng.gen_range(-hx..hx), rng.gen_range(-hy..hy), rng.gen_range(0.0..len));
                if inside(&sp.shape, &p) {
                    pts.push(o + Vec3::new(p.x, p.y, sp.axis_dir * p.z));
                }
            }
            masses.push(sp.mass / k as f64);
            points.push(pts);
        }
        PointCloud { points, masses }
    }

    /// Whole-body CG and inertia about the body origin for a posture. The
    /// segment chain is walked here from the joint offsets, not taken from
    /// the model's forward kinematics.
    pub fn mass_properties(&self, model: &BodyModel, p: &Posture) -> (f64, Vec3, Mat3) {
        let mut q = [Quat::IDENTITY; N_SEG];
        let mut d = [Vec3::zeros(); N_SEG];
        for s in Seg::ALL {
            if let Some(par) = s.parent() {
                let (i, k) = (s.idx(), par.idx());
                let j = p.joints[s.joint().unwrap()];
                q[i] = (q[k] * j).normalize();
                d[i] = d[k] + q[k].rotate(&Vec3::from(model.segments[i].joint_offset));
            }
        }
        let mut m = 0.0;
        let mut first = Vec3::zeros();
        let mut inertia = Mat3::zeros();
        for s in Seg::ALL {
            let i = s.idx();
            let r = q[i].dcm();
            let mp = self.masses[i];
            for pl in &self.points[i] {
                let x = d[i] + r * pl;
                m += mp;
                first += mp * x;
                inertia += mp * (Mat3::identity() * x.norm_squared() - x * x.transpose());
            }
        }
        (m, first / m, inertia)
    }
}

/// Residuals of the six scalar equations of motion, written component by
/// component with the product-of-inertia sign convention I = [Ixx −Ixy −Ixz; …].
pub fn equations_of_motion_residual(
    m: f64,
    r: Vec3,
    r_dot: Vec3,
    i: &Mat3,
    i_dot: &Mat3,
    v: Vec3,
    w: Vec3,
    v_dot: Vec3,
    w_dot: Vec3,
    f: Vec3,
    mom: Vec3,
) -> [f64; 6] {
    let (xc, yc, zc) = (r.x, r.y, r.z);
    let (xd, yd, zd) = (r_dot.x, r_dot.y, r_dot.z);
    let (u, vv, ww) = (v.x, v.y, v.z);
    let (p, q, rr) = (w.x, w.y, w.z);
    let (ud, vd, wd) = (v_dot.x, v_dot.y, v_dot.z);
    let (pd, qd, rd) = (w_dot.x, w_dot.y, w_dot.z);
    let ixx = i[(0, 0)];
    let iyy = i[(1, 1)];
    let izz = i[(2, 2)];
    let ixy = -i[(0, 1)];
    let ixz = -i[(0, 2)];
    let iyz = -i[(1, 2)];
    let dxx = i_dot[(0, 0)];
    let dyy = i_dot[(1, 1)];
    let dzz = i_dot[(2, 2)];
    let dxy = -i_dot[(0, 1)];
    let dxz = -i_dot[(0, 2)];
    let dyz = -i_dot[(1, 2)];

    let x = ud + qd * zc - rd * yc + q * zd - rr * yd + q * ww - rr * vv + q * (p * yc - q * xc) - rr * (rr * xc - p * zc);
    let y = vd + rd * xc - pd * zc + rr * xd - p * zd + rr * u - p * ww + rr * (q * zc - rr * yc) - p * (p * yc - q * xc);
    let z = wd + pd * yc - qd * xc + p * yd - q * xd + p * vv - q * u + p * (rr * xc - p * zc) - q * (q * zc - rr * yc);

    let l = dxx * p - dxy * q - dxz * rr + ixx * pd - ixy * (qd - rr * p) - ixz * (rd + p * q) - iyz * (q * q - rr * rr)
        + (izz - iyy) * q * rr
        + m * yd * ww
        - m * zd * vv
        + m * yc * (wd + vv * p - q * u)
        + m * zc * (-vd + ww * p - rr * u);
    let mm = dyy * q - dxy * p - dyz * rr + iyy * qd - ixy * (pd + q * rr) - iyz * (rd - p * q) - ixz * (rr * rr - p * p)
        + (ixx - izz) * p * rr
        + m * zd * u
        - m * xd * ww
        + m * xc * (-wd + q * u - p * vv)
        + m * zc * (ud + ww * q - rr * vv);
    let n = dzz * rr - dxz * p - dyz * q + izz * rd + ixz * (-pd + q * rr) - iyz * (qd + p * rr) + ixy * (q * q - p * p)
        + (iyy - ixx) * p * q
        + m * xd * vv
        - m * yd * u
        + m * xc * (vd + u * rr - p * ww)
        + m * yc * (-ud + vv * rr - q * ww);

    [f.x / m - x, f.y / m - y, f.z / m - z, mom.x - l, mom.y - mm, mom.z - n]
}

/// Same residuals from the momentum form: F = ṗ + Ω×p, M = l̇ + Ω×l + V×(mΩ×r).
pub fn momentum_residual(m: f64, r: Vec3, r_dot: Vec3, i: &Mat3, i_dot: &Mat3, v: Vec3, w: Vec3, v_dot: Vec3, w_dot: Vec3, f: Vec3, mom: Vec3) -> [f64; 6] {
    let p = m * v + m * w.cross(&r);
    let p_dot = m * v_dot + m * w_dot.cross(&r) + m * w.cross(&r_dot);
    let l = i * w + r.cross(&(m * v));
    let l_dot = i_dot * w + i * w_dot + r_dot.cross(&(m * v)) + r.cross(&(m * v_dot));
    let rf = f - (p_dot + w.cross(&p));
    let rm = mom - (l_dot + w.cross(&l) + v.cross(&(m * w.cross(&r))));
    [rf.x, rf.y, rf.z, rm.x, rm.y, rm.z]
}

/// Second-order low-pass step response overshoot, closed form.
pub fn second_order_overshoot(zeta: f64) -> f64 {
    (-zeta * std::f64::consts::PI / (1.0 - zeta * zeta).sqrt()).exp()
}

/// Steady-state amplitude ratio of a filter measured by driving it with a
/// sinusoid and fitting the last whole periods.
pub fn measured_gain(filter: impl Fn(&[f64]) -> Vec<f64>, f: f64, rate: f64) -> f64 {
    let n = (rate * 20.0) as usize;
    let x: Vec<f64> = (0..n).map(|k| (2.0 * std::f64::consts::PI * f * k as f64 / rate).sin()).collect();
    let y = filter(&x);
    let period = (rate / f).round() as usize;
    let tail = &y[n - 4 * period..];
    let xs = &x[n - 4 * period..];
    // least squares fit of y = a sin + b cos
    let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, &yv) in tail.iter().enumerate() {
        let s = xs[k];
        let c = (2.0 * std::f64::consts::PI * f * (n - 4 * period + k) as f64 / rate).cos();
        ss += s * s;
        sc += s * c;
        cc += c * c;
        ys += yv * s;
        yc += yv * c;
    }
    let det = ss * cc - sc * sc;
    let a = (ys * cc - yc * sc) / det;
    let b = (yc * ss - ys * sc) / det;
    (a * a + b * b).sqrt()
}
