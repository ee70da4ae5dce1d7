//! Aerodynamic forces and moments: per-limb lift, drag and moment, the arch
//! correction, the rate damping term and the conscious input moments.

use crate::body::{BodyModel, LimbAeroGeom, MassState, Posture, Seg, GRAVITY, N_SEG};
use crate::kinematics::{limb_wind_basis, BetaCondition, LimbWindBasis};
use crate::spatial::{quat_to_euler, EulerZYX, Quat, Vec3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const ARCH_LIMIT: f64 = PI / 8.0;
pub const DAMPING_SCALE: f64 = 0.005;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeroCoeffs {
    pub rho: f64,
    pub cl_max: f64,
    pub cd_max: f64,
    pub cm_max: f64,
    /// Per-limb `[cl, cd, cm]`, keyed by segment name.
    pub per_limb: Vec<(String, [f64; 3])>,
}

impl Default for AeroCoeffs {
    fn default() -> Self {
        AeroCoeffs { rho: 0.70, cl_max: 1.8, cd_max: 1.2, cm_max: 3.5, per_limb: vec![] }
    }
}

impl AeroCoeffs {
    fn table(&self) -> [[f64; 3]; N_SEG] {
        let mut t = [[self.cl_max, self.cd_max, self.cm_max]; N_SEG];
        for (name, c) in &self.per_limb {
            if let Some(s) = Seg::from_name(name) {
                t[s.idx()] = *c;
            }
        }
        t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchMode {
    /// Polynomial in the signed torso area of the current posture. Note it
    /// gives 1.055 at zero area, while `Pattern` gives 1.0 at zero angle.
    #[default]
    Area,
    /// Linear map of an explicit pattern angle.
    Pattern,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeroConfig {
    pub coeffs: AeroCoeffs,
    pub beta_condition: BetaCondition,
    pub basis_sign: BasisSign,
    pub arch_mode: ArchMode,
    /// Gain applied to the height-normalized arch area.
    pub arch_area_gain: f64,
    pub damping_scale: f64,
    /// Add the input companion forces to the total force.
    pub apply_input_force: bool,
}

impl Default for AeroConfig {
    fn default() -> Self {
        AeroConfig {
            coeffs: AeroCoeffs::default(),
            beta_condition: BetaCondition::default(),
            basis_sign: BasisSign::default(),
            arch_mode: ArchMode::default(),
            arch_area_gain: 1.0,
            damping_scale: DAMPING_SCALE,
            apply_input_force: false,
        }
    }
}

/// The six conscious-control coefficients, estimator ordering.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsciousInput {
    pub in_yaw: f64,
    pub in_pitch: f64,
    pub in_roll: f64,
    pub cd_yaw: f64,
    pub cd_pitch: f64,
    pub cd_roll: f64,
}

impl Default for ConsciousInput {
    fn default() -> Self {
        ConsciousInput::baseline()
    }
}

impl ConsciousInput {
    /// Zero inputs, damping yaw 0.5, pitch 3, roll 6.
    pub fn baseline() -> Self {
        ConsciousInput { in_yaw: 0.0, in_pitch: 0.0, in_roll: 0.0, cd_yaw: 0.5, cd_pitch: 3.0, cd_roll: 6.0 }
    }

    pub fn from_array(a: &[f64]) -> Self {
        ConsciousInput { in_yaw: a[0], in_pitch: a[1], in_roll: a[2], cd_yaw: a[3], cd_pitch: a[4], cd_roll: a[5] }
    }

    pub fn to_array(self) -> [f64; 6] {
        [self.in_yaw, self.in_pitch, self.in_roll, self.cd_yaw, self.cd_pitch, self.cd_roll]
    }

    /// Damping coefficients on body axes: X pitch, Y yaw, Z roll.
    pub fn damping_body(&self) -> Vec3 {
        Vec3::new(self.cd_pitch, self.cd_yaw, self.cd_roll)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputGroups {
    pub center: Vec<Seg>,
    pub up_prox: Vec<Seg>,
    pub low_prox: Vec<Seg>,
    pub right_dist: Vec<Seg>,
    pub left_dist: Vec<Seg>,
    pub right: Vec<Seg>,
    pub left: Vec<Seg>,
    /// Fixed lever arms l1..l4; `None` derives them from the posture.
    pub levers: Option<[f64; 4]>,
}

impl InputGroups {
    /// Groups named in the back-tracking example, torso as the pitch group.
    pub fn back_track() -> Self {
        use Seg::*;
        InputGroups {
            center: vec![Pelvis, Abdomen, Thorax, Head],
            up_prox: vec![Thorax, Head, UpperArmR, UpperArmL],
            low_prox: vec![UpperLegR, UpperLegL],
            right_dist: vec![LowerLegR, ForearmR],
            left_dist: vec![LowerLegL, ForearmL],
            right: vec![UpperLegR, LowerLegR, ForearmR, UpperArmR],
            left: vec![UpperLegL, LowerLegL, ForearmL, UpperArmL],
            levers: None,
        }
    }

    /// Pitch input through the legs and thighs.
    pub fn legs_pitch() -> Self {
        use Seg::*;
        InputGroups { center: vec![UpperLegR, UpperLegL, LowerLegR, LowerLegL], ..InputGroups::back_track() }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "back-track" | "default" | "belly-track-expert" => Some(InputGroups::back_track()),
            "legs-pitch" | "layout" => Some(InputGroups::legs_pitch()),
            "rw-suit" => {
                let mut g = InputGroups::back_track();
                g.right_dist.push(Seg::FootR);
                g.left_dist.push(Seg::FootL);
                Some(g)
            }
            _ => None,
        }
    }

    fn lever_arms(&self, mass: &MassState, model: &BodyModel) -> [f64; 4] {
        if let Some(l) = self.levers {
            return l;
        }
        let arm = |g: &[Seg]| -> f64 {
            let m: f64 = g.iter().map(|s| model.segments[s.idx()].mass).sum();
            if m <= 0.0 {
                return 0.0;
            }
            let c: Vec3 = g.iter().map(|s| mass.r_cg_i[s.idx()] * model.segments[s.idx()].mass).sum::<Vec3>() / m;
            (c - mass.r_cg).norm()
        };
        [
            arm(&self.up_prox),
            arm(&self.low_prox),
            0.5 * (arm(&self.right) + arm(&self.left)),
            0.5 * (arm(&self.right_dist) + arm(&self.left_dist)),
        ]
    }
}

/// Forces and moment on a single limb.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LimbLoads {
    /// Exposed area from the max-of-projections rule.
    pub area: f64,
    pub drag: Vec3,
    pub lift: Vec3,
    pub moment: Vec3,
}

/// How the sin 2α_i and sin 2β_i factors combine with the basis vectors.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisSign {
    /// |sin 2α_i| along n and m. Matches the Euler-angle form for every
    /// flow direction and does not depend on which way the limb axis points.
    #[default]
    Magnitude,
    /// Signed sin 2|α_i|, and a leading minus on the moment.
    Signed,
}

/// Limb-frame loads for a flow basis. `speed2` is ‖V‖².
pub fn limb_loads_local(b: &LimbWindBasis, g: &LimbAeroGeom, c: [f64; 3], rho: f64, speed2: f64, sign: BasisSign) -> LimbLoads {
    let [cl, cd, cm] = c;
    let q = 0.5 * rho * speed2;
    let v = b.v;
    // |cosβ sinα|, |cosβ cosα|, |sinβ| written with flow components
    let area = (g.a_xz * v.y.abs()).max(g.a_xy * v.z.abs()).max(g.a_yz * v.x.abs());
    let s2a = (2.0 * b.alpha_abs).sin();
    let s2b = (2.0 * b.beta_abs).sin();
    let (lift, moment) = match sign {
        BasisSign::Magnitude => (
            cl * (s2a.abs() * b.n_alpha + s2b.abs() * b.n_beta),
            cm * (s2a.abs() * b.m_alpha + s2b.abs() * b.m_beta),
        ),
        BasisSign::Signed => (cl * (s2a * b.n_alpha + s2b * b.n_beta), -cm * (s2a * b.m_alpha + s2b * b.m_beta)),
    };
    LimbLoads { area, drag: -q * area * cd * v, lift: q * g.a_char * lift, moment: q * g.a_char * g.l_char * moment }
}

/// Body-frame loads on one limb with orientation `q_limb`.
pub fn limb_loads(q_limb: Quat, u: &Vec3, g: &LimbAeroGeom, c: [f64; 3], rho: f64, speed2: f64, cond: BetaCondition, sign: BasisSign) -> LimbLoads {
    let b = limb_wind_basis(q_limb, u, cond);
    let l = limb_loads_local(&b, g, c, rho, speed2, sign);
    LimbLoads { area: l.area, drag: q_limb.rotate(&l.drag), lift: q_limb.rotate(&l.lift), moment: q_limb.rotate(&l.moment) }
}

pub fn arch_polynomial(a: f64) -> f64 {
    2.8828 * a.powi(3) - 0.0039 * a * a + 0.5281 * a + 1.055
}

pub fn arch_linear(alpha_arch: f64) -> f64 {
    1.0 - (0.2 / (PI / 8.0)) * alpha_arch
}

/// Signed torso area between the hip-to-neck chord and the polyline through
/// the hip, lumbar, thorax and neck joints, in the sagittal plane, over H².
/// Negative when the polyline lies ventral of the chord (arched).
pub fn arch_area(mass: &MassState, height: f64) -> f64 {
    let hip = 0.5 * (mass.d[Seg::UpperLegR.idx()] + mass.d[Seg::UpperLegL.idx()]);
    let pts = [hip, mass.d[Seg::Abdomen.idx()], mass.d[Seg::Thorax.idx()], mass.d[Seg::Head.idx()]];
    let (y0, z0) = (pts[0].y, pts[0].z);
    let (cy, cz) = (pts[3].y - y0, pts[3].z - z0);
    let len = (cy * cy + cz * cz).sqrt();
    if len < 1e-12 {
        return 0.0;
    }
    // chord coordinate s and dorsal offset h
    let sh: Vec<(f64, f64)> = pts
        .iter()
        .map(|p| {
            let (dy, dz) = (p.y - y0, p.z - z0);
            ((dy * cy + dz * cz) / len, (dy * cz - dz * cy) / len)
        })
        .collect();
    let mut a = 0.0;
    for k in 0..3 {
        a += 0.5 * (sh[k].1 + sh[k + 1].1) * (sh[k + 1].0 - sh[k].0);
    }
    a / (height * height)
}

pub fn arch_factor(mass: &MassState, model: &BodyModel, gain: f64) -> f64 {
    arch_polynomial(gain * arch_area(mass, model.height))
}

/// Apply the arch movement pattern to a neutral posture.
pub fn arch_pattern(alpha_arch: f64, neutral: &Posture) -> Posture {
    let a = if alpha_arch.abs() > ARCH_LIMIT {
        log::warn!("arch angle {alpha_arch:.4} rad clamped to ±π/8");
        alpha_arch.clamp(-ARCH_LIMIT, ARCH_LIMIT)
    } else {
        alpha_arch
    };
    let mut p = neutral.clone();
    let shift = |p: &mut Posture, s: Seg, dtheta: f64, dphi: f64| {
        let e = quat_to_euler(p.joint(s)).angles;
        p.set_euler(s, EulerZYX::new(e.psi, e.theta + dtheta, e.phi + dphi));
    };
    shift(&mut p, Seg::UpperLegR, 0.0, -a);
    shift(&mut p, Seg::UpperLegL, 0.0, -a);
    shift(&mut p, Seg::Abdomen, 0.0, a);
    shift(&mut p, Seg::Thorax, 0.0, 2.0 / 3.0 * a);
    shift(&mut p, Seg::Head, 0.0, 4.0 / 5.0 * a);
    shift(&mut p, Seg::UpperArmR, -2.0 / 3.0 * a, 0.0);
    shift(&mut p, Seg::UpperArmL, 2.0 / 3.0 * a, 0.0);
    p
}

#[derive(Clone, Debug, PartialEq)]
pub struct InputLoads {
    pub moment: Vec3,
    pub force: Vec3,
}

/// Muscle input moment and its companion force from per-limb total aero moments.
pub fn input_moment(m_atot: &[Vec3; N_SEG], groups: &InputGroups, input: &ConsciousInput, levers: [f64; 4]) -> InputLoads {
    let sum = |g: &[Seg], k: usize| -> f64 { g.iter().map(|s| m_atot[s.idx()][k]).sum() };
    let check = |g: &[Seg], c: f64, name: &str| {
        if g.is_empty() && c != 0.0 {
            log::warn!("input group {name} is empty but its coefficient is {c}");
        }
    };
    check(&groups.center, input.in_pitch, "center");
    check(&groups.up_prox, input.in_yaw, "up_prox");
    check(&groups.right, input.in_roll, "right");
    let center_x = sum(&groups.center, 0);
    let up_y = sum(&groups.up_prox, 1);
    let low_y = sum(&groups.low_prox, 1);
    let rd_y = sum(&groups.right_dist, 1);
    let ld_y = sum(&groups.left_dist, 1);
    let left_z = sum(&groups.left, 2);
    let right_z = sum(&groups.right, 2);
    let m_pitch = -input.in_pitch * center_x;
    let m_yaw = -input.in_yaw * (up_y + low_y + rd_y + ld_y);
    let m_roll = -input.in_roll * (left_z + right_z);
    let inv = |l: f64| if l > 1e-6 { 1.0 / l } else { 0.0 };
    let [l1, l2, l3, l4] = levers;
    let fx = -input.in_yaw * (inv(l1) * up_y - inv(l2) * low_y);
    let fy = input.in_pitch * inv(l1) * center_x - input.in_roll * inv(l3) * (left_z - right_z);
    let fz = -input.in_yaw * inv(l4) * (rd_y - ld_y);
    InputLoads { moment: Vec3::new(m_pitch, m_yaw, m_roll), force: Vec3::new(fx, fy, fz) }
}

/// Everything [`total_aero`] computes, for logging and tests.
#[derive(Clone, Debug, PartialEq)]
pub struct AeroOutput {
    pub force: Vec3,
    pub moment: Vec3,
    pub gravity: Vec3,
    pub drag: Vec3,
    pub lift: Vec3,
    pub damping: Vec3,
    pub input: InputLoads,
    pub m_atot: [Vec3; N_SEG],
    pub area_total: f64,
    pub f_arch: f64,
}

/// Inputs shared by every aerodynamic evaluation at one posture sample.
#[derive(Clone, Debug)]
pub struct AeroContext<'a> {
    pub model: &'a BodyModel,
    pub mass: &'a MassState,
    pub cfg: &'a AeroConfig,
    pub groups: &'a InputGroups,
    /// f_arch for this posture.
    pub f_arch: f64,
    pub gravity: f64,
}

impl<'a> AeroContext<'a> {
    pub fn new(model: &'a BodyModel, mass: &'a MassState, cfg: &'a AeroConfig, groups: &'a InputGroups, pattern_arch: Option<f64>) -> Self {
        let f_arch = match (cfg.arch_mode, pattern_arch) {
            (ArchMode::Off, _) => 1.0,
            (ArchMode::Pattern, Some(a)) => arch_linear(a.clamp(-ARCH_LIMIT, ARCH_LIMIT)),
            (ArchMode::Pattern, None) => 1.0,
            (ArchMode::Area, _) => arch_factor(mass, model, cfg.arch_area_gain),
        };
        AeroContext { model, mass, cfg, groups, f_arch, gravity: GRAVITY }
    }
}

/// Total force and moment about the body origin, in body axes.
/// `q_ib` maps body to inertial axes.
pub fn total_aero(ctx: &AeroContext, q_ib: Quat, v: &Vec3, omega: &Vec3, input: &ConsciousInput) -> AeroOutput {
    let mass = ctx.mass;
    let cfg = ctx.cfg;
    let rho = cfg.coeffs.rho;
    let g_body = q_ib.rotate_inv(&Vec3::new(0.0, 0.0, -mass.mass * ctx.gravity));
    let speed2 = v.norm_squared();
    let table = cfg.coeffs.table();
    let mut drag = Vec3::zeros();
    let mut lift = Vec3::zeros();
    let mut m_atot = [Vec3::zeros(); N_SEG];
    let mut area_total = 0.0;
    if speed2.sqrt() >= crate::kinematics::MIN_AIRSPEED {
        let u = v / speed2.sqrt();
        for s in Seg::ALL {
            let i = s.idx();
            let l = limb_loads(mass.q[i], &u, &ctx.model.aero[i], table[i], rho, speed2, cfg.beta_condition, cfg.basis_sign);
            let f = l.lift + ctx.f_arch * l.drag;
            m_atot[i] = mass.r_cg_i[i].cross(&f) + l.moment;
            drag += l.drag;
            lift += l.lift;
            area_total += l.area;
        }
    }
    let drag = ctx.f_arch * drag;
    let damping = -cfg.damping_scale * rho * area_total * speed2 * ctx.model.height * input.damping_body().component_mul(omega);
    let levers = ctx.groups.lever_arms(mass, ctx.model);
    let inp = input_moment(&m_atot, ctx.groups, input, levers);
    let mut force = lift + drag + g_body;
    if cfg.apply_input_force {
        force += inp.force;
    }
    let moment = m_atot.iter().sum::<Vec3>() + mass.r_cg.cross(&g_body) + damping + inp.moment;
    AeroOutput { force, moment, gravity: g_body, drag, lift, damping, input: inp, m_atot, area_total, f_arch: ctx.f_arch }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_values() {
        assert!((arch_polynomial(0.0) - 1.055).abs() < 1e-15);
        assert!((arch_polynomial(-0.2) - 0.9261616).abs() < 1e-12);
        assert!((arch_linear(ARCH_LIMIT) - 0.8).abs() < 1e-15);
        assert_eq!(arch_linear(0.0), 1.0);
    }

    #[test]
    fn zero_arch_pattern_is_identity() {
        let n = Posture::neutral(0.5);
        let p = arch_pattern(0.0, &n);
        for j in 0..crate::body::N_JOINT {
            assert!(p.joints[j].distance(n.joints[j]) < 1e-12);
        }
    }

    #[test]
    fn zero_inputs_zero_loads() {
        let m = [Vec3::new(1.0, 2.0, 3.0); N_SEG];
        let ci = ConsciousInput { in_yaw: 0.0, in_pitch: 0.0, in_roll: 0.0, ..ConsciousInput::baseline() };
        let l = input_moment(&m, &InputGroups::back_track(), &ci, [0.3; 4]);
        assert_eq!(l.moment, Vec3::zeros());
        assert_eq!(l.force, Vec3::zeros());
    }
}
