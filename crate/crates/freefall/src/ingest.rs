//! Recording ingest: posture and measurement files, motion-capture
//! retargeting (23-segment T-pose capture skeleton to the 16-segment H-pose
//! model) and the shared second-order low-pass filter.

use crate::body::{Posture, Seg, N_JOINT};
use crate::spatial::Quat;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("empty stream: {0}")]
    Empty(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error("line {0}: {1}")]
    Parse(usize, String),
    #[error("non-monotonic timestamp at line {0}")]
    NonMonotonic(usize),
    #[error("gap of {0} samples at t={1:.4} s exceeds the fill limit")]
    Gap(usize, f64),
    #[error("missing capture segment {0}")]
    MissingSegment(String),
}

// ---------------------------------------------------------------- low-pass

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LowPassSpec {
    pub damping: f64,
    pub cutoff_hz: f64,
    pub sample_rate: f64,
}

impl Default for LowPassSpec {
    fn default() -> Self {
        LowPassSpec { damping: 0.7, cutoff_hz: 2.0, sample_rate: 240.0 }
    }
}

impl LowPassSpec {
    /// |H(j 2π f)| of the continuous prototype.
    pub fn analytic_gain(&self, f: f64) -> f64 {
        let r = f / self.cutoff_hz;
        1.0 / ((1.0 - r * r).powi(2) + (2.0 * self.damping * r).powi(2)).sqrt()
    }
}

/// Causal biquad from the bilinear transform, prewarped at the cutoff.
#[derive(Clone, Debug)]
pub struct LowPass {
    b: [f64; 3],
    a: [f64; 2],
    s1: f64,
    s2: f64,
}

impl LowPass {
    pub fn new(spec: &LowPassSpec) -> Self {
        let w = 2.0 * PI * spec.cutoff_hz;
        let k = w / (w / (2.0 * spec.sample_rate)).tan();
        let z = spec.damping;
        let a0 = k * k + 2.0 * z * w * k + w * w;
        let a1 = 2.0 * w * w - 2.0 * k * k;
        let a2 = k * k - 2.0 * z * w * k + w * w;
        let g = w * w / a0;
        LowPass { b: [g, 2.0 * g, g], a: [a1 / a0, a2 / a0], s1: 0.0, s2: 0.0 }
    }

    /// Start from steady state at `x`.
    pub fn reset_to(&mut self, x: f64) {
        // steady state of transposed direct form II with unity DC gain
        self.s1 = x - self.b[0] * x;
        self.s2 = self.b[2] * x - self.a[1] * x;
    }

    pub fn step(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.s1;
        self.s1 = self.b[1] * x - self.a[0] * y + self.s2;
        self.s2 = self.b[2] * x - self.a[1] * y;
        y
    }

    pub fn poles_stable(&self) -> bool {
        // z² + a1 z + a2: Jury conditions
        let (a1, a2) = (self.a[0], self.a[1]);
        a2.abs() < 1.0 && (1.0 + a1 + a2) > 0.0 && (1.0 - a1 + a2) > 0.0
    }
}

pub fn lowpass(signal: &[f64], spec: &LowPassSpec) -> Vec<f64> {
    let mut f = LowPass::new(spec);
    signal.iter().map(|&x| f.step(x)).collect()
}

// ------------------------------------------------------------- retargeting

pub const N_CAPTURE: usize = 23;

pub const CAPTURE_SEGMENTS: [&str; N_CAPTURE] = [
    "Pelvis",
    "L5",
    "L3",
    "T12",
    "T8",
    "Neck",
    "Head",
    "RightShoulder",
    "RightUpperArm",
    "RightForeArm",
    "RightHand",
    "LeftShoulder",
    "LeftUpperArm",
    "LeftForeArm",
    "LeftHand",
    "RightUpperLeg",
    "RightLowerLeg",
    "RightFoot",
    "RightToe",
    "LeftUpperLeg",
    "LeftLowerLeg",
    "LeftFoot",
    "LeftToe",
];

/// Capture segment whose orientation stands for each model segment.
fn representative(s: Seg) -> usize {
    use Seg::*;
    match s {
        Pelvis => 0,
        Abdomen => 2,
        Thorax => 4,
        Head => 6,
        UpperArmR => 8,
        ForearmR => 9,
        HandR => 10,
        UpperArmL => 12,
        ForearmL => 13,
        HandL => 14,
        UpperLegR => 15,
        LowerLegR => 16,
        FootR => 17,
        UpperLegL => 19,
        LowerLegL => 20,
        FootL => 21,
    }
}

/// Model segment each surplus capture segment is merged into.
fn merged_into(c: usize) -> Seg {
    use Seg::*;
    match c {
        0 => Pelvis,
        1 | 2 => Abdomen,
        3 | 4 | 7 | 11 => Thorax,
        5 | 6 => Head,
        8 => UpperArmR,
        9 => ForearmR,
        10 => HandR,
        12 => UpperArmL,
        13 => ForearmL,
        14 => HandL,
        15 => UpperLegR,
        16 => LowerLegR,
        17 | 18 => FootR,
        19 => UpperLegL,
        20 => LowerLegL,
        _ => FootL,
    }
}

/// Capture frame to model frame.
pub fn q_capture_to_model() -> Quat {
    Quat::new(FRAC_PI_4.cos(), 0.0, 0.0, FRAC_PI_4.sin())
}

/// Capture-axis mirror through the capture sagittal plane (y → −y).
fn mirror_capture(q: Quat) -> Quat {
    Quat::new(q.w, -q.x, q.y, -q.z)
}

/// H-pose to T-pose rotation of a segment, in capture axes.
pub fn h_to_t(s: Seg) -> Quat {
    use Seg::*;
    let c = FRAC_PI_4.cos();
    let sn = FRAC_PI_4.sin();
    match s {
        UpperArmR | ForearmR => Quat::new(c, -sn, 0.0, 0.0),
        // wrist T→H is rot_y(π/2) ⊗ rot_x(π/2)
        HandR => (Quat::new(c, 0.0, sn, 0.0) * Quat::new(c, sn, 0.0, 0.0)).conj(),
        FootR => Quat::rot_y(-FRAC_PI_2),
        UpperArmL | ForearmL | HandL | FootL => mirror_capture(h_to_t(s.mirror())),
        _ => Quat::IDENTITY,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MocapFrame {
    /// Segment-to-inertial orientation, capture convention, `CAPTURE_SEGMENTS` order.
    pub segments: [Quat; N_CAPTURE],
    pub t: f64,
}

/// Relative joint rotation in model axes and H-pose convention.
pub fn joint_from_capture(parent: Quat, child: Quat, sp: Seg, sc: Seg) -> Quat {
    let x = q_capture_to_model();
    let rel = parent.conj() * child;
    (x.conj() * h_to_t(sp) * rel * h_to_t(sc).conj() * x).normalize()
}

pub fn retarget(frame: &MocapFrame) -> Result<Posture, IngestError> {
    for (i, q) in frame.segments.iter().enumerate() {
        if !q.is_finite() || q.norm() < 0.5 {
            return Err(IngestError::MissingSegment(CAPTURE_SEGMENTS[i].to_string()));
        }
    }
    let mut p = Posture { t: frame.t, ..Posture::zero() };
    for s in Seg::ALL.iter().skip(1) {
        let par = s.parent().unwrap();
        let gp = frame.segments[representative(par)].normalize();
        let gc = frame.segments[representative(*s)].normalize();
        p.joints[s.joint().unwrap()] = joint_from_capture(gp, gc, par, *s);
    }
    Ok(p)
}

/// Inverse of [`retarget`]: capture-convention segment orientations for a
/// model posture, given the capture orientation of the pelvis.
pub fn to_capture(p: &Posture, pelvis: Quat) -> MocapFrame {
    let x = q_capture_to_model();
    let mut g = [Quat::IDENTITY; crate::body::N_SEG];
    g[0] = pelvis;
    for s in Seg::ALL.iter().skip(1) {
        let par = s.parent().unwrap();
        let rel = h_to_t(par).conj() * (x * p.joint(*s) * x.conj()) * h_to_t(*s);
        g[s.idx()] = (g[par.idx()] * rel).normalize();
    }
    let mut seg = [Quat::IDENTITY; N_CAPTURE];
    for (c, q) in seg.iter_mut().enumerate() {
        *q = g[merged_into(c).idx()];
    }
    MocapFrame { segments: seg, t: p.t }
}

// --------------------------------------------------------------- file I/O

pub const POSTURE_SCHEMA: &str = "freefall-posture";
pub const MAX_FILL: usize = 4;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PostureHeader {
    pub schema: String,
    pub version: u32,
    /// "joints" (15 model joint quaternions) or "capture" (23 capture segments).
    pub kind: String,
    pub rate: f64,
    pub names: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct QuatRecord {
    t: f64,
    q: Vec<[f64; 4]>,
}

pub fn write_posture_stream(path: &Path, postures: &[Posture], rate: f64) -> Result<(), IngestError> {
    let header = PostureHeader {
        schema: POSTURE_SCHEMA.into(),
        version: 1,
        kind: "joints".into(),
        rate,
        names: (0..N_JOINT).map(|j| crate::body::joint_name(j).to_string()).collect(),
    };
    let mut buf = serde_json::to_string(&header).unwrap();
    buf.push('\n');
    for p in postures {
        let rec = QuatRecord { t: p.t, q: p.joints.iter().map(|q| q.to_array()).collect() };
        buf.push_str(&serde_json::to_string(&rec).unwrap());
        buf.push('\n');
    }
    write_atomic(path, buf.as_bytes())
}

pub fn write_capture_stream(path: &Path, frames: &[MocapFrame], rate: f64) -> Result<(), IngestError> {
    let header = PostureHeader {
        schema: POSTURE_SCHEMA.into(),
        version: 1,
        kind: "capture".into(),
        rate,
        names: CAPTURE_SEGMENTS.iter().map(|s| s.to_string()).collect(),
    };
    let mut buf = serde_json::to_string(&header).unwrap();
    buf.push('\n');
    for f in frames {
        let rec = QuatRecord { t: f.t, q: f.segments.iter().map(|q| q.to_array()).collect() };
        buf.push_str(&serde_json::to_string(&rec).unwrap());
        buf.push('\n');
    }
    write_atomic(path, buf.as_bytes())
}

/// Write to a sibling temp file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    let tmp = path.with_extension("tmp~");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_posture_stream(path: &Path) -> Result<Vec<Posture>, IngestError> {
    let f = std::fs::File::open(path)?;
    let mut lines = BufReader::new(f).lines().enumerate().filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
    let (_, head) = lines.next().ok_or_else(|| IngestError::Empty(path.display().to_string()))?;
    let header: PostureHeader = serde_json::from_str(&head?).map_err(|e| IngestError::Schema(e.to_string()))?;
    if header.schema != POSTURE_SCHEMA || header.version != 1 {
        return Err(IngestError::Schema(format!("{} v{}", header.schema, header.version)));
    }
    let width = match header.kind.as_str() {
        "joints" => N_JOINT,
        "capture" => N_CAPTURE,
        k => return Err(IngestError::Schema(format!("unknown kind {k}"))),
    };
    if header.names.len() != width {
        return Err(IngestError::Schema(format!("expected {width} names, got {}", header.names.len())));
    }
    if !(header.rate > 0.0) {
        return Err(IngestError::Schema("rate must be positive".into()));
    }
    let mut raw: Vec<(f64, Vec<Quat>)> = Vec::new();
    for (n, line) in lines {
        let rec: QuatRecord = serde_json::from_str(&line?).map_err(|e| IngestError::Parse(n + 1, e.to_string()))?;
        if rec.q.len() != width {
            return Err(IngestError::Parse(n + 1, format!("{} quaternions, expected {width}", rec.q.len())));
        }
        if let Some(last) = raw.last() {
            if rec.t <= last.0 {
                return Err(IngestError::NonMonotonic(n + 1));
            }
        }
        raw.push((rec.t, rec.q.iter().map(|a| Quat::from_array(*a).normalize()).collect()));
    }
    if raw.is_empty() {
        return Err(IngestError::Empty(path.display().to_string()));
    }
    let filled = fill_gaps(raw, 1.0 / header.rate)?;
    filled
        .into_iter()
        .map(|(t, qs)| {
            if width == N_JOINT {
                let mut p = Posture { t, ..Posture::zero() };
                p.joints.copy_from_slice(&qs);
                Ok(p)
            } else {
                let mut seg = [Quat::IDENTITY; N_CAPTURE];
                seg.copy_from_slice(&qs);
                retarget(&MocapFrame { segments: seg, t })
            }
        })
        .collect()
}

/// Resample onto the uniform grid, filling holes of up to `MAX_FILL` samples by slerp.
fn fill_gaps(raw: Vec<(f64, Vec<Quat>)>, dt: f64) -> Result<Vec<(f64, Vec<Quat>)>, IngestError> {
    let t0 = raw[0].0;
    let mut out: Vec<(f64, Vec<Quat>)> = Vec::with_capacity(raw.len());
    let mut prev: Option<(usize, Vec<Quat>)> = None;
    for (t, qs) in raw {
        let k = ((t - t0) / dt).round() as usize;
        if let Some((pk, pq)) = &prev {
            if k <= *pk {
                return Err(IngestError::NonMonotonic(out.len() + 2));
            }
            let missing = k - pk - 1;
            if missing > MAX_FILL {
                return Err(IngestError::Gap(missing, t));
            }
            for m in 1..=missing {
                let s = m as f64 / (missing + 1) as f64;
                let q = pq.iter().zip(&qs).map(|(a, b)| a.slerp(*b, s)).collect();
                out.push((t0 + (pk + m) as f64 * dt, q));
            }
        }
        out.push((t0 + k as f64 * dt, qs.clone()));
        prev = Some((k, qs));
    }
    Ok(out)
}

// ----------------------------------------------------------- measurements

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    VHor,
    Heading,
    Pitch,
    Roll,
    YawRate,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::VHor => "v_hor",
            Channel::Heading => "heading",
            Channel::Pitch => "pitch",
            Channel::Roll => "roll",
            Channel::YawRate => "yaw_rate",
        }
    }

    pub fn from_name(s: &str) -> Option<Channel> {
        [Channel::VHor, Channel::Heading, Channel::Pitch, Channel::Roll, Channel::YawRate]
            .into_iter()
            .find(|c| c.name() == s)
    }

    pub fn is_angle(self) -> bool {
        matches!(self, Channel::Heading | Channel::Pitch | Channel::Roll)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementTrack {
    pub channels: Vec<Channel>,
    pub t: Vec<f64>,
    pub z: Vec<Vec<f64>>,
}

impl MeasurementTrack {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// CSV: header `t,<channel>,...`, one row per sample.
pub fn load_measurements(path: &Path, expect: Option<&[Channel]>) -> Result<MeasurementTrack, IngestError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (_, head) = lines.next().ok_or_else(|| IngestError::Empty(path.display().to_string()))?;
    let cols: Vec<&str> = head.split(',').map(str::trim).collect();
    if cols.first() != Some(&"t") {
        return Err(IngestError::Schema("first column must be t".into()));
    }
    let channels = cols[1..]
        .iter()
        .map(|c| Channel::from_name(c).ok_or_else(|| IngestError::Schema(format!("unknown channel {c}"))))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(e) = expect {
        if e != channels.as_slice() {
            return Err(IngestError::Schema(format!("channels {:?} do not match profile {:?}", channels, e)));
        }
    }
    let mut track = MeasurementTrack { channels, t: vec![], z: vec![] };
    for (n, l) in lines {
        let v = l
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| IngestError::Parse(n + 1, e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        if v.len() != cols.len() {
            return Err(IngestError::Parse(n + 1, "column count".into()));
        }
        if let Some(&last) = track.t.last() {
            if v[0] <= last {
                return Err(IngestError::NonMonotonic(n + 1));
            }
        }
        track.t.push(v[0]);
        track.z.push(v[1..].to_vec());
    }
    if track.is_empty() {
        return Err(IngestError::Empty(path.display().to_string()));
    }
    Ok(track)
}

pub fn write_measurements(path: &Path, track: &MeasurementTrack) -> Result<(), IngestError> {
    let mut s = String::from("t");
    for c in &track.channels {
        s.push(',');
        s.push_str(c.name());
    }
    s.push('\n');
    for (t, z) in track.t.iter().zip(&track.z) {
        s.push_str(&format!("{t:.6}"));
        for v in z {
            s.push_str(&format!(",{v:.17e}"));
        }
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}
