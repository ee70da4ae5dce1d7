use freefall::aero::ConsciousInput;
use freefall::body::Posture;
use freefall::dynamics::{trim, Plant, SkydiverState};
use freefall::estimator::{
    attitude_angles, constrain, estimate_track, heading_rate, matrix_sqrt, observe, sigma_points, update, yaw_rate_from_heading, MeasurementProfile,
    Prediction, SqrtMethod, StateMat, StateVec, UkfConfig, N_SIGMA, N_STATE,
};
use freefall::ingest::{Channel, MeasurementTrack};
use freefall::maneuvers::{synthetic_track, SyntheticSpec};
use freefall::spatial::{wrap_pi, Quat, Vec3};
use nalgebra::DVector;
use proptest::prelude::*;
use std::f64::consts::{FRAC_PI_2, PI};

fn spd() -> impl Strategy<Value = StateMat> {
    proptest::collection::vec(-1.0..1.0f64, N_STATE * N_STATE).prop_map(|v| {
        let a = StateMat::from_column_slice(&v);
        a * a.transpose() + StateMat::identity() * 1e-3
    })
}

fn state() -> impl Strategy<Value = StateVec> {
    proptest::collection::vec(0.0..6.0f64, N_STATE).prop_map(|v| StateVec::from_column_slice(&v))
}

proptest! {
    #[test]
    fn sigma_points_reproduce_moments(x in state(), p in spd(), chol in any::<bool>()) {
        let cfg = UkfConfig { sqrt: if chol { SqrtMethod::Cholesky } else { SqrtMethod::Symmetric }, ..UkfConfig::default() };
        let (pts, w) = sigma_points(&x, &p, &cfg).unwrap();
        let mean: StateVec = pts.iter().zip(w.iter()).map(|(p, w)| p * *w).sum();
        prop_assert!((mean - x).norm() < 1e-9);
        let mut cov = StateMat::zeros();
        for (pt, wi) in pts.iter().zip(w.iter()) {
            let d = pt - x;
            cov += *wi * d * d.transpose();
        }
        prop_assert!((cov - p).norm() < 1e-9 * (1.0 + p.norm()));
    }

    #[test]
    fn square_roots_factor(p in spd()) {
        let s = matrix_sqrt(&p, SqrtMethod::Symmetric).unwrap();
        prop_assert!((s * s.transpose() - p).norm() < 1e-9 * (1.0 + p.norm()));
        prop_assert!((s - s.transpose()).norm() < 1e-9 * (1.0 + s.norm()));
        let l = matrix_sqrt(&p, SqrtMethod::Cholesky).unwrap();
        prop_assert!((l * l.transpose() - p).norm() < 1e-9 * (1.0 + p.norm()));
    }

    #[test]
    fn constrained_points_stay_in_bounds(x in state(), p in spd(), scale in 0.1..30.0f64) {
        let cfg = UkfConfig::default().with_negative_damping();
        let (mut pts, _) = sigma_points(&x, &(p * scale), &cfg).unwrap();
        constrain(&mut pts, &x, &cfg);
        for pt in &pts {
            for j in 0..N_STATE {
                prop_assert!(pt[j] >= cfg.bounds_min[j] && pt[j] <= cfg.bounds_max[j]);
            }
        }
    }

    /// An anchor sitting on a bound keeps its sigma points apart instead of
    /// piling them onto the bound.
    #[test]
    fn anchor_on_bound_reflects(j in 0usize..N_STATE, d in 0.01..0.2f64) {
        let cfg = UkfConfig::default();
        let mut x = StateVec::from([1.0, 1.0, 1.0, 5.0, 5.0, 5.0]);
        x[j] = cfg.bounds_min[j];
        let mut p = StateMat::identity() * 1e-4;
        p[(j, j)] = d * d;
        let (mut pts, _) = sigma_points(&x, &p, &cfg).unwrap();
        constrain(&mut pts, &x, &cfg);
        let minus = pts[1 + N_STATE + j][j];
        let plus = pts[1 + j][j];
        prop_assert!(minus > cfg.bounds_min[j]);
        prop_assert!((minus - x[j] - cfg.k_reflect * (plus - x[j])).abs() < 1e-12);
    }

    #[test]
    fn heading_rate_matches_finite_difference(
        yaw in -PI..PI, pitch in 0.3..2.8f64, w in (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
    ) {
        let q = Quat::rot_z(yaw) * Quat::rot_x(PI - pitch);
        let omega = Vec3::new(w.0, w.1, w.2);
        let s = SkydiverState { q, v: Vec3::zeros(), omega, pos: Vec3::zeros() };
        let h = 1e-6;
        let step = |sign: f64| {
            let dq = Quat::from_axis_angle(&omega.normalize(), sign * h * omega.norm());
            attitude_angles((q * dq).normalize(), 0.0).0
        };
        prop_assume!(omega.norm() > 1e-3);
        let fd = wrap_pi(step(1.0) - step(-1.0)) / (2.0 * h);
        prop_assert!((fd - heading_rate(&s)).abs() < 1e-4 * (1.0 + fd.abs()), "{fd} vs {}", heading_rate(&s));
    }
}

#[test]
fn level_fall_at_any_heading_has_zero_pitch_and_roll() {
    for yaw in [-2.0, -0.5, 0.0, 1.0, 3.0] {
        let base = SkydiverState::falling(55.0, FRAC_PI_2);
        let s = SkydiverState { q: Quat::rot_z(yaw) * base.q, ..base };
        let (_, pitch, roll) = attitude_angles(s.q, 0.0);
        assert!(pitch.abs() < 1e-9 && wrap_pi(roll).abs() < 1e-9, "{yaw}: {pitch} {roll}");
    }
}

#[test]
fn heading_tracks_yaw() {
    let base = SkydiverState::falling(55.0, 1.2);
    let h0 = attitude_angles(base.q, 0.0).0;
    let h1 = attitude_angles(Quat::rot_z(0.4) * base.q, 0.0).0;
    assert!((wrap_pi(h1 - h0).abs() - 0.4).abs() < 1e-9);
}

#[test]
fn yaw_rate_of_a_wrapped_ramp() {
    let dt = 1.0 / 240.0;
    let rate = 1.3;
    let heading: Vec<f64> = (0..2400).map(|k| wrap_pi(rate * k as f64 * dt)).collect();
    let r = yaw_rate_from_heading(&heading, dt);
    for v in &r[480..2390] {
        assert!((v - rate).abs() < 1e-6);
    }
}

#[test]
fn perfect_measurement_leaves_mean_and_shrinks_spread() {
    let cfg = UkfConfig::default();
    let profile = MeasurementProfile::turning();
    let x = StateVec::from([1.0, 1.0, 1.0, 5.0, 5.0, 5.0]);
    let p = StateMat::identity() * 0.1;
    let (points, weights) = sigma_points(&x, &p, &cfg).unwrap();
    // linear measurement of the first three coefficients
    let z_i: Vec<DVector<f64>> = points.iter().map(|pt| DVector::from_vec(vec![pt[0], pt[1] * 0.5, pt[2]])).collect();
    let z_pred = DVector::from_vec(vec![1.0, 0.5, 1.0]);
    let pred = Prediction { x_pred: x, p_pred: p, points, weights, states: vec![], z_i, z_pred: z_pred.clone(), diverged: vec![] };
    let (x2, p2) = update(&pred, &z_pred, &cfg, &profile);
    assert!((x2 - x).norm() < 1e-12);
    assert!(p2.trace() < p.trace());
    assert!(p2[(0, 0)] < p[(0, 0)] && (p2[(4, 4)] - p[(4, 4)]).abs() < 1e-12);
    assert_eq!(N_SIGMA, 13);
}

#[test]
fn observe_follows_channel_order() {
    let s = SkydiverState::falling(55.0, 1.2);
    let all = observe(&s, &[Channel::VHor, Channel::Heading, Channel::Pitch, Channel::Roll, Channel::YawRate], 0.0);
    let some = observe(&s, &[Channel::Roll, Channel::VHor], 0.0);
    assert_eq!(some, vec![all[3], all[0]]);
}

#[test]
fn config_and_profile_validation() {
    assert!(UkfConfig { w0: 1.0, ..UkfConfig::default() }.validate().is_err());
    assert!(UkfConfig { n_solve: 0, ..UkfConfig::default() }.validate().is_err());
    let mut bad = UkfConfig::default();
    bad.bounds_min[2] = 10.0;
    assert!(bad.validate().is_err());
    let mut p = MeasurementProfile::tracking();
    p.r_std[1] = 0.0;
    assert!(p.validate().is_err());
    assert!(MeasurementProfile::by_name("turning").is_some());
    assert!(MeasurementProfile::by_name("spiral").is_none());
}

#[test]
fn misaligned_tracks_are_rejected() {
    let plant = Plant::nominal();
    let tr = trim(&plant, &Posture::neutral(0.5)).unwrap();
    let frames = vec![plant.static_frame(&tr.posture(&Posture::neutral(0.5))); 10];
    let profile = MeasurementProfile::tracking();
    let meas = MeasurementTrack { channels: profile.channels.clone(), t: (0..50).map(|k| k as f64 / 240.0).collect(), z: vec![vec![0.0; 4]; 50] };
    assert!(estimate_track(&plant, &frames, &meas, tr.state(), &UkfConfig::default(), &profile).is_err());
    let wrong = MeasurementTrack { channels: vec![Channel::Pitch, Channel::Roll, Channel::YawRate], ..meas.clone() };
    let frames = vec![frames[0].clone(); 60];
    assert!(estimate_track(&plant, &frames, &wrong, tr.state(), &UkfConfig::default(), &profile).is_err());
}

#[test]
fn constant_coefficients_are_recovered_in_sign() {
    // short noise-free track with one set of coefficients throughout
    let plant = Plant::nominal();
    let profile = MeasurementProfile::tracking();
    let truth = ConsciousInput { in_yaw: 0.8, in_pitch: 0.6, in_roll: 0.8, cd_yaw: 2.0, cd_pitch: 12.0, cd_roll: 6.0 };
    let spec = SyntheticSpec { duration: 6.0, schedule: vec![freefall::maneuvers::CoefficientStep { t: 0.0, input: truth }], noise: false, ..SyntheticSpec::default() };
    let track = synthetic_track(&plant, &spec, &profile, 1).unwrap();
    let cfg = UkfConfig { n_solve: 4, ..UkfConfig::default() };
    let est = estimate_track(&plant, &track.frames, &track.measurements, track.init, &cfg, &profile).unwrap();
    assert!(!est.partial);
    assert_eq!(est.t.len(), track.measurements.t.len());
    let tail = &est.x[est.x.len() / 2..];
    let truth = truth.to_array();
    for j in 0..N_STATE {
        let ok = tail.iter().filter(|x| x[j] > 0.0).count() as f64 / tail.len() as f64;
        assert!(ok > 0.95, "coefficient {j}: {ok} (truth {})", truth[j]);
    }
}
