mod common;

use common::{random_posture, random_symmetric_posture, PointCloud};
use freefall::body::{forward_chain, mass_derivatives, segment_bsp, AnthroConfig, BodyModel, Posture, Seg, SegmentSpec, Shape};
use freefall::spatial::{EulerZYX, Vec3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn point_cloud_matches_on_random_postures() {
    let model = BodyModel::nominal();
    let cloud = PointCloud::new(&model, 200_000, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let p = random_posture(&mut rng);
        let ms = forward_chain(&model, &p);
        let (m, cg, inertia) = cloud.mass_properties(&model, &p);
        assert!((m - ms.mass).abs() < 1e-9 * m);
        assert!((cg - ms.r_cg).norm() < 0.005 * model.height, "cg {cg} vs {}", ms.r_cg);
        assert!((inertia - ms.inertia).norm() < 0.01 * ms.inertia.norm());
    }
}

#[test]
fn segment_solids_match_point_cloud() {
    // one segment of each shape kind, in isolation
    let shapes = [
        Shape::TruncatedCone { r_top: 0.06, r_bottom: 0.035, length: 0.4 },
        Shape::EllipticalCylinder { a: 0.05, b: 0.12, length: 0.25 },
        Shape::Ellipsoid { a: 0.08, b: 0.1, c: 0.12 },
    ];
    for shape in shapes {
        let spec = SegmentSpec { seg: Seg::Pelvis, shape, mass: 3.0, joint_offset: [0.0; 3], shape_origin: [0.01, -0.02, 0.03], axis_dir: -1.0 };
        let model = BodyModel::from_specs(vec![spec.clone()].into_iter().chain(BodyModel::nominal().segments.into_iter().skip(1)).collect(), 1.7).unwrap();
        let bsp = segment_bsp(&spec).unwrap();
        let cloud = PointCloud::new(&model, 4_000_000, 5);
        let pts = &cloud.points[0];
        let n = pts.len() as f64;
        let cg: Vec3 = pts.iter().sum::<Vec3>() / n;
        assert!((cg - bsp.local_cg).norm() < 1e-3, "{shape:?}: {cg} vs {}", bsp.local_cg);
        let mut i = freefall::spatial::Mat3::zeros();
        for p in pts {
            let x = p - cg;
            i += (3.0 / n) * (freefall::spatial::Mat3::identity() * x.norm_squared() - x * x.transpose());
        }
        for k in 0..3 {
            let (a, b) = (i[(k, k)], bsp.inertia[(k, k)]);
            assert!((a - b).abs() < 0.01 * b, "{shape:?} axis {k}: {a} vs {b}");
        }
    }
}

#[test]
fn nominal_body_totals() {
    let model = BodyModel::nominal();
    let sum: f64 = model.segments.iter().map(|s| s.mass).sum();
    assert!((sum - 70.0).abs() < 1e-9);
    assert!((model.height - 1.70).abs() < 1e-12);
}

#[test]
fn config_file_round_trip() {
    let cfg = AnthroConfig { mass: 90.0, ..AnthroConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("body.toml");
    std::fs::write(&path, toml::to_string(&cfg).unwrap()).unwrap();
    let back = AnthroConfig::load(&path).unwrap();
    assert_eq!(back, cfg);
    let m = BodyModel::from_config(&back).unwrap();
    assert!((m.total_mass - 90.0).abs() < 1e-9);
}

#[test]
fn malformed_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("body.toml");
    std::fs::write(&path, "height = \"tall\"\n").unwrap();
    assert!(AnthroConfig::load(&path).is_err());
}

#[test]
fn derivatives_of_a_steady_posture_vanish() {
    let model = BodyModel::nominal();
    let ms = forward_chain(&model, &Posture::neutral(0.4));
    let hist = vec![ms; 480];
    for (rd, id) in mass_derivatives(&hist, 1.0 / 240.0, 0.5).unwrap() {
        assert!(rd.norm() < 1e-12 && id.norm() < 1e-12);
    }
}

#[test]
fn derivatives_track_a_slow_motion() {
    // shoulders sweep slowly; the filtered rate should follow the central difference
    let model = BodyModel::nominal();
    let dt = 1.0 / 240.0;
    let at = |t: f64| {
        let mut p = Posture::zero();
        p.set_sym(Seg::UpperArmR, EulerZYX::new(0.0, 0.5 * (0.5 * t).sin(), 0.0));
        forward_chain(&model, &p)
    };
    let hist: Vec<_> = (0..2400).map(|k| at(k as f64 * dt)).collect();
    let d = mass_derivatives(&hist, dt, 0.5).unwrap();
    for k in [1200, 1800] {
        let t = k as f64 * dt;
        let exact = (at(t + 1e-5).r_cg - at(t - 1e-5).r_cg) / 2e-5;
        assert!((d[k].0 - exact).norm() < 0.05 * exact.norm() + 1e-6, "{} vs {exact}", d[k].0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mirrored_postures_have_midplane_cg(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_symmetric_posture(&mut rng);
        let ms = forward_chain(&BodyModel::nominal(), &p);
        prop_assert!(ms.r_cg.x.abs() < 1e-9);
        prop_assert!(ms.inertia[(0, 1)].abs() < 1e-9);
        prop_assert!(ms.inertia[(0, 2)].abs() < 1e-9);
    }

    #[test]
    fn inertia_is_positive_definite(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ms = forward_chain(&BodyModel::nominal(), &random_posture(&mut rng));
        let e = ms.inertia.symmetric_eigenvalues();
        prop_assert!(e.iter().all(|v| *v > 0.0));
        // triangle inequality of principal moments
        let mut v: Vec<f64> = e.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        prop_assert!(v[0] + v[1] >= v[2] * (1.0 - 1e-9));
    }

    #[test]
    fn mirror_of_posture_mirrors_cg(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_posture(&mut rng);
        let model = BodyModel::nominal();
        let a = forward_chain(&model, &p).r_cg;
        let b = forward_chain(&model, &p.mirrored()).r_cg;
        prop_assert!((a.x + b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9 && (a.z - b.z).abs() < 1e-9);
    }
}
