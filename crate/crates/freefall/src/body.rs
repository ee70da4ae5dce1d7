//! Sixteen-segment biomechanical model: segment solids, the kinematic tree,
//! and whole-body center of gravity and inertia for a posture.
//!
//! Body axes: X to the left, Y dorsal, Z toward the head. The body origin is
//! the pelvic joint. In the all-zero posture every local frame is parallel to
//! the body frame, arms hang down and feet are pointed.

use crate::ingest::{LowPass, LowPassSpec};
use crate::spatial::{EulerZYX, Mat3, Quat, Vec3};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const N_SEG: usize = 16;
pub const N_JOINT: usize = 15;
pub const GRAVITY: f64 = 9.80665;

#[derive(Debug, Error)]
pub enum BodyError {
    #[error("invalid segment spec for {0}: {1}")]
    InvalidSpec(&'static str, String),
    #[error("insufficient history: need at least 3 samples, got {0}")]
    InsufficientHistory(usize),
    #[error("anthropometric config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Seg {
    Pelvis,
    Abdomen,
    Thorax,
    Head,
    UpperArmR,
    ForearmR,
    HandR,
    UpperArmL,
    ForearmL,
    HandL,
    UpperLegR,
    LowerLegR,
    FootR,
    UpperLegL,
    LowerLegL,
    FootL,
}

impl Seg {
    pub const ALL: [Seg; N_SEG] = [
        Seg::Pelvis,
        Seg::Abdomen,
        Seg::Thorax,
        Seg::Head,
        Seg::UpperArmR,
        Seg::ForearmR,
        Seg::HandR,
        Seg::UpperArmL,
        Seg::ForearmL,
        Seg::HandL,
        Seg::UpperLegR,
        Seg::LowerLegR,
        Seg::FootR,
        Seg::UpperLegL,
        Seg::LowerLegL,
        Seg::FootL,
    ];

    pub fn idx(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Seg::Pelvis => "pelvis",
            Seg::Abdomen => "abdomen",
            Seg::Thorax => "thorax",
            Seg::Head => "head",
            Seg::UpperArmR => "upper_arm_r",
            Seg::ForearmR => "forearm_r",
            Seg::HandR => "hand_r",
            Seg::UpperArmL => "upper_arm_l",
            Seg::ForearmL => "forearm_l",
            Seg::HandL => "hand_l",
            Seg::UpperLegR => "upper_leg_r",
            Seg::LowerLegR => "lower_leg_r",
            Seg::FootR => "foot_r",
            Seg::UpperLegL => "upper_leg_l",
            Seg::LowerLegL => "lower_leg_l",
            Seg::FootL => "foot_l",
        }
    }

    pub fn from_name(s: &str) -> Option<Seg> {
        Seg::ALL.iter().copied().find(|g| g.name() == s)
    }

    pub fn parent(self) -> Option<Seg> {
        use Seg::*;
        Some(match self {
            Pelvis => return None,
            Abdomen => Pelvis,
            Thorax => Abdomen,
            Head => Thorax,
            UpperArmR | UpperArmL => Thorax,
            ForearmR => UpperArmR,
            ForearmL => UpperArmL,
            HandR => ForearmR,
            HandL => ForearmL,
            UpperLegR | UpperLegL => Pelvis,
            LowerLegR => UpperLegR,
            LowerLegL => UpperLegL,
            FootR => LowerLegR,
            FootL => LowerLegL,
        })
    }

    /// Sagittal mirror image (left <-> right).
    pub fn mirror(self) -> Seg {
        use Seg::*;
        match self {
            UpperArmR => UpperArmL,
            ForearmR => ForearmL,
            HandR => HandL,
            UpperArmL => UpperArmR,
            ForearmL => ForearmR,
            HandL => HandR,
            UpperLegR => UpperLegL,
            LowerLegR => LowerLegL,
            FootR => FootL,
            UpperLegL => UpperLegR,
            LowerLegL => LowerLegR,
            FootL => FootR,
            s => s,
        }
    }

    /// Index of the joint whose child is this segment.
    pub fn joint(self) -> Option<usize> {
        if self == Seg::Pelvis {
            None
        } else {
            Some(self.idx() - 1)
        }
    }
}

/// Joint `j` connects `Seg::ALL[j + 1]` to its parent.
pub fn joint_child(j: usize) -> Seg {
    Seg::ALL[j + 1]
}

pub fn joint_name(j: usize) -> &'static str {
    [
        "lumbar",
        "thorax",
        "neck",
        "shoulder_r",
        "elbow_r",
        "wrist_r",
        "shoulder_l",
        "elbow_l",
        "wrist_l",
        "hip_r",
        "knee_r",
        "ankle_r",
        "hip_l",
        "knee_l",
        "ankle_l",
    ][j]
}

pub fn joint_from_name(s: &str) -> Option<usize> {
    (0..N_JOINT).find(|&j| joint_name(j) == s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    TruncatedCone { r_top: f64, r_bottom: f64, length: f64 },
    EllipticalCylinder { a: f64, b: f64, length: f64 },
    Ellipsoid { a: f64, b: f64, c: f64 },
}

impl Shape {
    fn dims(&self) -> Vec<f64> {
        match *self {
            Shape::TruncatedCone { r_top, r_bottom, length } => vec![r_top.max(r_bottom), length],
            Shape::EllipticalCylinder { a, b, length } => vec![a, b, length],
            Shape::Ellipsoid { a, b, c } => vec![a, b, c],
        }
    }

    /// Extent along the segment axis.
    pub fn length(&self) -> f64 {
        match *self {
            Shape::TruncatedCone { length, .. } | Shape::EllipticalCylinder { length, .. } => length,
            Shape::Ellipsoid { c, .. } => 2.0 * c,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub seg: Seg,
    pub shape: Shape,
    pub mass: f64,
    /// Joint origin in the parent's local frame.
    pub joint_offset: [f64; 3],
    /// Proximal end of the solid in the local frame.
    pub shape_origin: [f64; 3],
    /// +1 when the solid extends along local +Z from `shape_origin`, −1 along −Z.
    pub axis_dir: f64,
}

/// Projected areas and lengths used by the aerodynamic model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimbAeroGeom {
    pub a_xz: f64,
    pub a_xy: f64,
    pub a_yz: f64,
    pub a_char: f64,
    pub l_char: f64,
}

/// Uniform-density solid properties in the segment frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentInertia {
    pub local_cg: Vec3,
    pub inertia: Mat3,
}

pub fn segment_bsp(spec: &SegmentSpec) -> Result<SegmentInertia, BodyError> {
    if spec.shape.dims().iter().any(|d| !(*d > 0.0)) {
        return Err(BodyError::InvalidSpec(spec.seg.name(), format!("{:?}", spec.shape)));
    }
    if let Shape::TruncatedCone { r_top, r_bottom, .. } = spec.shape {
        if r_top < 0.0 || r_bottom < 0.0 {
            return Err(BodyError::InvalidSpec(spec.seg.name(), "negative radius".into()));
        }
    }
    if !(spec.mass > 0.0) {
        return Err(BodyError::InvalidSpec(spec.seg.name(), format!("mass {}", spec.mass)));
    }
    let m = spec.mass;
    // (cg along axis measured from the proximal end, Ixx, Iyy, Izz about cg)
    let (zc, ixx, iyy, izz) = match spec.shape {
        Shape::TruncatedCone { r_top: r0, r_bottom: r1, length: h } => {
            // slices of radius r(z) = r0 + s z
            let s = (r1 - r0) / h;
            let i2 = r0 * r0 * h + r0 * s * h * h + s * s * h.powi(3) / 3.0;
            let i2z = r0 * r0 * h * h / 2.0 + 2.0 * r0 * s * h.powi(3) / 3.0 + s * s * h.powi(4) / 4.0;
            let i2zz = r0 * r0 * h.powi(3) / 3.0 + r0 * s * h.powi(4) / 2.0 + s * s * h.powi(5) / 5.0;
            let i4 = h * (r0.powi(4) + r0.powi(3) * r1 + r0 * r0 * r1 * r1 + r0 * r1.powi(3) + r1.powi(4)) / 5.0;
            let k = m / i2;
            let zc = i2z / i2;
            let it = k * (i4 / 4.0 + i2zz) - m * zc * zc;
            (zc, it, it, k * i4 / 2.0)
        }
        Shape::EllipticalCylinder { a, b, length: l } => (
            l / 2.0,
            m * (b * b / 4.0 + l * l / 12.0),
            m * (a * a / 4.0 + l * l / 12.0),
            m * (a * a + b * b) / 4.0,
        ),
        Shape::Ellipsoid { a, b, c } => (c, m * (b * b + c * c) / 5.0, m * (a * a + c * c) / 5.0, m * (a * a + b * b) / 5.0),
    };
    let o = Vec3::from(spec.shape_origin);
    Ok(SegmentInertia {
        local_cg: o + Vec3::new(0.0, 0.0, spec.axis_dir * zc),
        inertia: Mat3::from_diagonal(&Vec3::new(ixx, iyy, izz)),
    })
}

pub fn segment_aero_geom(spec: &SegmentSpec) -> LimbAeroGeom {
    use std::f64::consts::PI;
    let (a_xz, a_xy, a_yz, l) = match spec.shape {
        Shape::TruncatedCone { r_top, r_bottom, length } => {
            let side = (r_top + r_bottom) * length;
            let rm = r_top.max(r_bottom);
            (side, PI * rm * rm, side, length)
        }
        Shape::EllipticalCylinder { a, b, length } => (2.0 * a * length, PI * a * b, 2.0 * b * length, length),
        Shape::Ellipsoid { a, b, c } => (PI * a * c, PI * a * b, PI * b * c, 2.0 * c),
    };
    LimbAeroGeom { a_xz, a_xy, a_yz, a_char: a_xz, l_char: l }
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Somatotype {
    Ectomorph,
    #[default]
    Mesomorph,
    Endomorph,
}

impl Somatotype {
    fn width_factor(self) -> f64 {
        match self {
            Somatotype::Ectomorph => 0.92,
            Somatotype::Mesomorph => 1.0,
            Somatotype::Endomorph => 1.10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Equipment {
    pub helmet_mass: f64,
    /// Added to every head semi-axis.
    pub helmet_thickness: f64,
    pub container_mass: f64,
    /// Added to the thorax dorsal semi-axis.
    pub container_depth: f64,
    pub weight_belt_mass: f64,
    pub booties: bool,
    /// Rear width of the triangular bootie surface at the ankle.
    pub bootie_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentOverride {
    pub name: String,
    pub mass: Option<f64>,
    pub shape: Option<Shape>,
}

/// On-disk anthropometric description (TOML, `schema_version = 1`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnthroConfig {
    pub schema_version: u32,
    pub height: f64,
    pub mass: f64,
    #[serde(default)]
    pub somatotype: Somatotype,
    #[serde(default)]
    pub equipment: Equipment,
    #[serde(default, rename = "segment")]
    pub segments: Vec<SegmentOverride>,
}

impl Default for AnthroConfig {
    fn default() -> Self {
        AnthroConfig {
            schema_version: 1,
            height: 1.70,
            mass: 70.0,
            somatotype: Somatotype::Mesomorph,
            equipment: Equipment::default(),
            segments: vec![],
        }
    }
}

impl AnthroConfig {
    pub fn load(path: &Path) -> Result<Self, BodyError> {
        let text = std::fs::read_to_string(path).map_err(|e| BodyError::Config(format!("{}: {e}", path.display())))?;
        let cfg: AnthroConfig = toml::from_str(&text).map_err(|e| BodyError::Config(e.to_string()))?;
        if cfg.schema_version != 1 {
            return Err(BodyError::Config(format!("unsupported schema_version {}", cfg.schema_version)));
        }
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
pub struct BodyModel {
    pub segments: Vec<SegmentSpec>,
    pub inertia: Vec<SegmentInertia>,
    pub aero: Vec<LimbAeroGeom>,
    pub total_mass: f64,
    pub height: f64,
}

// Reference 1.70 m / 70 kg mesomorph. Mass fractions follow the usual
// cadaver-based tables; lengths and radii are repo defaults (m).
const MASS_FRAC: [f64; N_SEG] = [
    0.1117, 0.1633, 0.1596, 0.0694, 0.0271, 0.0162, 0.0061, 0.0271, 0.0162, 0.0061, 0.1416, 0.0433, 0.0137, 0.1416,
    0.0433, 0.0137,
];

fn reference_segments() -> Vec<(Seg, Shape, [f64; 3], [f64; 3], f64)> {
    use Seg::*;
    let cone = |r_top, r_bottom, length| Shape::TruncatedCone { r_top, r_bottom, length };
    let cyl = |a, b, length| Shape::EllipticalCylinder { a, b, length };
    let mut v = vec![
        (Pelvis, cyl(0.15, 0.10, 0.18), [0.0; 3], [0.0, 0.0, 0.10], -1.0),
        (Abdomen, cyl(0.14, 0.095, 0.17), [0.0, 0.0, 0.10], [0.0; 3], 1.0),
        (Thorax, cyl(0.16, 0.10, 0.28), [0.0, 0.0, 0.17], [0.0; 3], 1.0),
        (Head, Shape::Ellipsoid { a: 0.075, b: 0.095, c: 0.12 }, [0.0, 0.0, 0.28], [0.0, 0.0, 0.01], 1.0),
        (UpperArmR, cone(0.048, 0.038, 0.30), [-0.20, 0.0, 0.24], [0.0; 3], -1.0),
        (ForearmR, cone(0.038, 0.028, 0.26), [0.0, 0.0, -0.30], [0.0; 3], -1.0),
        (HandR, cyl(0.018, 0.045, 0.18), [0.0, 0.0, -0.26], [0.0; 3], -1.0),
        (UpperLegR, cone(0.080, 0.052, 0.41), [-0.09, 0.0, -0.05], [0.0; 3], -1.0),
        (LowerLegR, cone(0.052, 0.034, 0.41), [0.0, 0.0, -0.41], [0.0; 3], -1.0),
        (FootR, cyl(0.040, 0.050, 0.20), [0.0, 0.0, -0.41], [0.0; 3], -1.0),
    ];
    let left: Vec<_> = v
        .iter()
        .filter(|e| e.0.mirror() != e.0)
        .map(|&(s, sh, j, o, d)| (s.mirror(), sh, [-j[0], j[1], j[2]], [-o[0], o[1], o[2]], d))
        .collect();
    v.extend(left);
    v.sort_by_key(|e| e.0.idx());
    v
}

impl BodyModel {
    pub fn from_specs(segments: Vec<SegmentSpec>, height: f64) -> Result<Self, BodyError> {
        if segments.len() != N_SEG {
            return Err(BodyError::Config(format!("expected {N_SEG} segments, got {}", segments.len())));
        }
        for (i, s) in segments.iter().enumerate() {
            if s.seg.idx() != i {
                return Err(BodyError::Config(format!("segment {} out of order", s.seg.name())));
            }
        }
        let inertia = segments.iter().map(segment_bsp).collect::<Result<Vec<_>, _>>()?;
        let aero = segments.iter().map(segment_aero_geom).collect();
        let total_mass = segments.iter().map(|s| s.mass).sum();
        Ok(BodyModel { segments, inertia, aero, total_mass, height })
    }

    /// Default model scaled from the reference table.
    pub fn from_config(cfg: &AnthroConfig) -> Result<Self, BodyError> {
        if !(cfg.height > 0.0 && cfg.mass > 0.0) {
            return Err(BodyError::Config("height and mass must be positive".into()));
        }
        let kl = cfg.height / 1.70;
        let kw = ((cfg.mass / 70.0) / kl).sqrt() * cfg.somatotype.width_factor();
        let eq = &cfg.equipment;
        let mut specs: Vec<SegmentSpec> = reference_segments()
            .into_iter()
            .map(|(seg, shape, joint, origin, dir)| {
                let shape = match shape {
                    Shape::TruncatedCone { r_top, r_bottom, length } => {
                        Shape::TruncatedCone { r_top: r_top * kw, r_bottom: r_bottom * kw, length: length * kl }
                    }
                    Shape::EllipticalCylinder { a, b, length } => {
                        Shape::EllipticalCylinder { a: a * kw, b: b * kw, length: length * kl }
                    }
                    Shape::Ellipsoid { a, b, c } => Shape::Ellipsoid { a: a * kw, b: b * kw, c: c * kl },
                };
                let sc = |p: [f64; 3]| {
                    // lateral joint spacing follows width, the rest follows length
                    [p[0] * kw, p[1] * kl, p[2] * kl]
                };
                SegmentSpec {
                    seg,
                    shape,
                    mass: MASS_FRAC[seg.idx()] * cfg.mass,
                    joint_offset: sc(joint),
                    shape_origin: sc(origin),
                    axis_dir: dir,
                }
            })
            .collect();
        specs[Seg::Head.idx()].mass += eq.helmet_mass;
        if eq.helmet_thickness > 0.0 {
            if let Shape::Ellipsoid { a, b, c } = specs[Seg::Head.idx()].shape {
                let t = eq.helmet_thickness;
                specs[Seg::Head.idx()].shape = Shape::Ellipsoid { a: a + t, b: b + t, c: c + t };
            }
        }
        specs[Seg::Thorax.idx()].mass += eq.container_mass;
        if eq.container_depth > 0.0 {
            if let Shape::EllipticalCylinder { a, b, length } = specs[Seg::Thorax.idx()].shape {
                specs[Seg::Thorax.idx()].shape = Shape::EllipticalCylinder { a, b: b + eq.container_depth, length };
            }
        }
        specs[Seg::Pelvis.idx()].mass += eq.weight_belt_mass;
        for o in &cfg.segments {
            let seg = Seg::from_name(&o.name).ok_or_else(|| BodyError::Config(format!("unknown segment {}", o.name)))?;
            if let Some(m) = o.mass {
                specs[seg.idx()].mass = m;
            }
            if let Some(s) = o.shape {
                specs[seg.idx()].shape = s;
            }
        }
        let mut model = BodyModel::from_specs(specs, cfg.height)?;
        if eq.booties {
            for s in [Seg::LowerLegR, Seg::LowerLegL] {
                let l = model.segments[s.idx()].shape.length();
                model.aero[s.idx()].a_xz += 0.5 * l * eq.bootie_width;
                model.aero[s.idx()].a_char += 0.5 * l * eq.bootie_width;
            }
        }
        Ok(model)
    }

    pub fn nominal() -> Self {
        BodyModel::from_config(&AnthroConfig::default()).expect("reference table is valid")
    }

    /// Distal end point of each solid in its local frame.
    pub fn segment_tip_local(&self, s: Seg) -> Vec3 {
        let sp = &self.segments[s.idx()];
        Vec3::from(sp.shape_origin) + Vec3::new(0.0, 0.0, sp.axis_dir * sp.shape.length())
    }
}

/// Joint configuration: one child-relative-to-parent rotation per joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Posture {
    pub joints: [Quat; N_JOINT],
    pub t: f64,
}

impl Default for Posture {
    fn default() -> Self {
        Posture::zero()
    }
}

impl Posture {
    pub fn zero() -> Self {
        Posture { joints: [Quat::IDENTITY; N_JOINT], t: 0.0 }
    }

    pub fn from_euler(e: &[EulerZYX; N_JOINT]) -> Self {
        let mut p = Posture::zero();
        for (j, a) in e.iter().enumerate() {
            p.joints[j] = a.to_quat();
        }
        p
    }

    pub fn euler(&self) -> [EulerZYX; N_JOINT] {
        let mut out = [EulerZYX::default(); N_JOINT];
        for (j, q) in self.joints.iter().enumerate() {
            out[j] = crate::spatial::quat_to_euler(*q).angles;
        }
        out
    }

    pub fn joint(&self, s: Seg) -> Quat {
        s.joint().map(|j| self.joints[j]).unwrap_or(Quat::IDENTITY)
    }

    pub fn set_euler(&mut self, s: Seg, e: EulerZYX) {
        if let Some(j) = s.joint() {
            self.joints[j] = e.to_quat();
        }
    }

    /// Set a right-side joint and its mirrored left counterpart.
    pub fn set_sym(&mut self, right: Seg, e: EulerZYX) {
        self.set_euler(right, e);
        let q = e.to_quat().mirror_x();
        if let Some(j) = right.mirror().joint() {
            self.joints[j] = q;
        }
    }

    /// Sagittal mirror image of the whole posture.
    pub fn mirrored(&self) -> Posture {
        let mut p = self.clone();
        for s in Seg::ALL.iter().skip(1) {
            p.joints[s.mirror().joint().unwrap()] = self.joint(*s).mirror_x();
        }
        p
    }

    pub fn max_norm_error(&self) -> f64 {
        self.joints.iter().map(|q| (q.norm() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Standard belly-to-earth neutral pose with the given knee bend.
    pub fn neutral(knee: f64) -> Posture {
        let mut p = Posture::zero();
        p.set_euler(Seg::Abdomen, EulerZYX::new(0.0, 0.0, -0.10));
        p.set_euler(Seg::Thorax, EulerZYX::new(0.0, 0.0, -0.075));
        p.set_euler(Seg::Head, EulerZYX::new(0.0, 0.0, -0.30));
        p.set_sym(Seg::UpperArmR, EulerZYX::new(0.0, 80f64.to_radians(), 0.0));
        p.set_sym(Seg::ForearmR, EulerZYX::new(0.0, 90f64.to_radians(), 0.0));
        p.set_sym(Seg::UpperLegR, EulerZYX::new(0.0, 20f64.to_radians(), -0.15));
        p.set_sym(Seg::LowerLegR, EulerZYX::new(0.0, 0.0, knee));
        p
    }
}

/// Instantaneous mass distribution in the body frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MassState {
    pub mass: f64,
    pub r_cg: Vec3,
    /// About the body origin.
    pub inertia: Mat3,
    /// Segment origins.
    pub d: [Vec3; N_SEG],
    /// Segment orientation: `q[i].rotate(local)` is in body axes.
    pub q: [Quat; N_SEG],
    pub r_cg_i: [Vec3; N_SEG],
}

pub fn forward_chain(model: &BodyModel, p: &Posture) -> MassState {
    let mut q = [Quat::IDENTITY; N_SEG];
    let mut d = [Vec3::zeros(); N_SEG];
    let mut r = [Vec3::zeros(); N_SEG];
    let mut inertia = Mat3::zeros();
    let mut msum = Vec3::zeros();
    for s in Seg::ALL {
        let i = s.idx();
        if let Some(par) = s.parent() {
            let k = par.idx();
            q[i] = (q[k] * p.joint(s)).normalize();
            d[i] = d[k] + q[k].rotate(&Vec3::from(model.segments[i].joint_offset));
        }
        let si = &model.inertia[i];
        let m = model.segments[i].mass;
        r[i] = d[i] + q[i].rotate(&si.local_cg);
        let c = q[i].dcm();
        let dl = r[i];
        inertia += c * si.inertia * c.transpose() + m * (Mat3::identity() * dl.norm_squared() - dl * dl.transpose());
        msum += m * dl;
    }
    let mass = model.total_mass;
    MassState { mass, r_cg: msum / mass, inertia: 0.5 * (inertia + inertia.transpose()), d, q, r_cg_i: r }
}

/// Filtered time derivatives of r_cg and I for a uniformly sampled history.
/// Values inside the first `settle` seconds are held at zero.
pub fn mass_derivatives(history: &[MassState], dt: f64, settle: f64) -> Result<Vec<(Vec3, Mat3)>, BodyError> {
    let n = history.len();
    if n < 3 {
        return Err(BodyError::InsufficientHistory(n));
    }
    let chan = |k: usize| -> [f64; 12] {
        let h = &history[k];
        let mut a = [0.0; 12];
        a[..3].copy_from_slice(h.r_cg.as_slice());
        a[3..].copy_from_slice(h.inertia.as_slice());
        a
    };
    let spec = LowPassSpec { sample_rate: 1.0 / dt, ..LowPassSpec::default() };
    let mut filters: Vec<LowPass> = (0..12).map(|_| LowPass::new(&spec)).collect();
    let n_settle = (settle / dt).round() as usize;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (a, b, span) = if k == 0 {
            (chan(1), chan(0), dt)
        } else if k == n - 1 {
            (chan(n - 1), chan(n - 2), dt)
        } else {
            (chan(k + 1), chan(k - 1), 2.0 * dt)
        };
        let mut f = [0.0; 12];
        for c in 0..12 {
            f[c] = filters[c].step((a[c] - b[c]) / span);
        }
        if k < n_settle {
            out.push((Vec3::zeros(), Mat3::zeros()));
        } else {
            let idot = Mat3::from_column_slice(&f[3..]);
            out.push((Vec3::new(f[0], f[1], f[2]), 0.5 * (idot + idot.transpose())));
        }
    }
    Ok(out)
}

/// Settling window used when deriving mass derivatives at 240 Hz.
pub const DERIVATIVE_SETTLE_S: f64 = 0.5;
