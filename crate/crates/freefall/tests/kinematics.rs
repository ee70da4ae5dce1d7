use freefall::kinematics::{
    body_wind_angles, limb_wind_angles_euler, limb_wind_basis, unit_from_angles, AlphaNumerator, BetaCondition, DEGENERATE_LIFT,
};
use freefall::spatial::{Quat, Vec3};
use proptest::prelude::*;
use std::f64::consts::{FRAC_PI_2, PI};

fn quat() -> impl Strategy<Value = Quat> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("non-degenerate", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
        .prop_map(|(w, x, y, z)| Quat::new(w, x, y, z).normalize())
}

fn velocity() -> impl Strategy<Value = Vec3> {
    (-60.0..60.0f64, -60.0..60.0f64, -60.0..60.0f64)
        .prop_filter("airspeed", |(x, y, z)| x * x + y * y + z * z > 1.0)
        .prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

proptest! {
    #[test]
    fn body_angles_reconstruct_velocity(v in velocity()) {
        let (a, b) = body_wind_angles(&v).unwrap();
        prop_assert!((unit_from_angles(a, b) - v.normalize()).norm() < 1e-9);
    }

    #[test]
    fn basis_vectors_orthonormal(q in quat(), v in velocity(), printed in any::<bool>()) {
        let cond = if printed { BetaCondition::NAlphaY } else { BetaCondition::NBetaY };
        let b = limb_wind_basis(q, &v.normalize(), cond);
        prop_assert!((b.v.norm() - 1.0).abs() < 1e-9);
        for (n, m, degenerate) in [(b.n_alpha, b.m_alpha, b.alpha_degenerate), (b.n_beta, b.m_beta, b.beta_degenerate)] {
            if degenerate {
                prop_assert!(n.norm() == 0.0);
                continue;
            }
            prop_assert!((n.norm() - 1.0).abs() < 1e-9);
            prop_assert!((m.norm() - 1.0).abs() < 1e-9);
            prop_assert!(n.dot(&b.v).abs() < 1e-9);
            prop_assert!(m.dot(&b.v).abs() < 1e-9);
            prop_assert!(m.dot(&n).abs() < 1e-9);
            prop_assert!((m - b.v.cross(&n)).norm() < 1e-9);
        }
    }

    /// Recompute the lift directions and sign conditions from the flow
    /// direction alone.
    #[test]
    fn basis_matches_direct_evaluation(q in quat(), v in velocity(), printed in any::<bool>()) {
        let cond = if printed { BetaCondition::NAlphaY } else { BetaCondition::NBetaY };
        let b = limb_wind_basis(q, &v.normalize(), cond);
        let vl = q.conj().rotate(&v.normalize());
        prop_assert!((vl - b.v).norm() < 1e-12);
        prop_assert!((b.alpha_abs - vl.z.acos()).abs() < 1e-9);
        prop_assert!((b.beta_abs - vl.x.acos()).abs() < 1e-9);

        // v × (v × a) = v (v·a) − a for unit v
        let na = vl * vl.z - Vec3::z();
        let nb = vl * vl.x - Vec3::x();
        prop_assume!(na.norm() > 1e-6 && nb.norm() > 1e-6);
        let (na, nb) = (na.normalize(), nb.normalize());
        let cond_alpha = (b.alpha_abs > FRAC_PI_2 && na.z > 0.0) || (b.alpha_abs < FRAC_PI_2 && na.z < 0.0);
        prop_assert_eq!(b.cond_alpha, cond_alpha);
        let na = if cond_alpha { -na } else { na };
        prop_assert!((b.n_alpha - na).norm() < 1e-9);
        let cond_beta = match cond {
            BetaCondition::NAlphaY => na.y < 0.0,
            BetaCondition::NBetaY => nb.y < 0.0,
        };
        prop_assert_eq!(b.cond_beta, cond_beta);
        let nb = if cond_beta { -nb } else { nb };
        prop_assert!((b.n_beta - nb).norm() < 1e-9);
    }

    /// The Euler extraction and the flow vector describe the same direction.
    #[test]
    fn euler_and_basis_agree_on_flow(q in quat(), alpha in -PI..PI, beta in -1.4..1.4f64) {
        let e = limb_wind_angles_euler(q, alpha, beta, AlphaNumerator::Consistent);
        prop_assume!(!e.degenerate);
        let b = limb_wind_basis(q, &unit_from_angles(alpha, beta), BetaCondition::NBetaY);
        prop_assert!((unit_from_angles(e.alpha, e.beta) - b.v).norm() < 1e-9);
    }

    /// Limbs rotated in the sagittal plane only: both forms give the same
    /// angle of attack magnitude and zero sideslip.
    #[test]
    fn planar_limbs_agree(theta in -PI..PI, alpha in -PI..PI) {
        let q = Quat::rot_x(theta);
        let e = limb_wind_angles_euler(q, alpha, 0.0, AlphaNumerator::Consistent);
        let b = limb_wind_basis(q, &unit_from_angles(alpha, 0.0), BetaCondition::NBetaY);
        prop_assert!((e.alpha.abs() - b.alpha_abs).abs() < 1e-9);
        prop_assert!(e.beta.abs() < 1e-9);
        prop_assert!((b.beta_abs - FRAC_PI_2).abs() < 1e-9);
    }
}

#[test]
fn belly_down_fall_angles() {
    let (a, b) = body_wind_angles(&Vec3::new(0.0, 0.0, -60.0)).unwrap();
    assert!((a.abs() - PI).abs() < 1e-12 || a.abs() < 1e-12);
    assert_eq!(b, 0.0);
    let (a, _) = body_wind_angles(&Vec3::new(0.0, -60.0, 0.0)).unwrap();
    assert!((a - FRAC_PI_2).abs() < 1e-12);
}

#[test]
fn limb_rotated_about_x() {
    let e = limb_wind_angles_euler(Quat::rot_x(FRAC_PI_2), 0.0, 0.0, AlphaNumerator::Consistent);
    assert!((e.alpha + FRAC_PI_2).abs() < 1e-12);
    assert!(e.beta.abs() < 1e-12 && e.gamma.abs() < 1e-12);
}

#[test]
fn degenerate_directions() {
    let b = limb_wind_basis(Quat::IDENTITY, &Vec3::z(), BetaCondition::NBetaY);
    assert!(b.alpha_degenerate && b.alpha_abs.abs() < 1e-12);
    let b = limb_wind_basis(Quat::IDENTITY, &Vec3::x(), BetaCondition::NBetaY);
    assert!(b.beta_degenerate && b.beta_abs.abs() < 1e-12);
    assert!(DEGENERATE_LIFT > 0.0);
}
