use freefall::body::{AnthroConfig, LimbAeroGeom};
use freefall::cli::{cmd_estimate, cmd_layout, cmd_oscillate, cmd_reconstruct, cmd_trim, CliError, EstimationSection, Pattern, PostureSource, Scenario};
use freefall::dynamics::{trim, DynamicsError, Plant};
use freefall::body::Posture;
use freefall::maneuvers::{LayoutKind, OscMode, Regime, SweepConfig, SyntheticSpec};
use freefall::spatial::wrap_pi;
use std::path::Path;
use std::process::Command;

fn scenario(dir: &Path) -> Scenario {
    Scenario { output_dir: dir.to_path_buf(), ..Scenario::default() }
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let j = header.iter().position(|h| h.starts_with(name)).unwrap_or_else(|| panic!("no column {name} in {header:?}"));
    lines.map(|l| l.split(',').nth(j).unwrap().parse().unwrap()).collect()
}

#[test]
fn nominal_trim_report() {
    let dir = tempfile::tempdir().unwrap();
    let r = cmd_trim(&scenario(dir.path())).unwrap();
    assert!((r.terminal_speed_mps - 60.0).abs() <= 10.0);
    assert!((r.body_pitch_deg - 90.0).abs() <= 10.0);
    assert!(r.residual.iter().all(|v| v.abs() < 1e-6));
    assert!(dir.path().join("trim.json").exists());
}

#[test]
fn heavier_diver_falls_faster() {
    let dir = tempfile::tempdir().unwrap();
    let body = dir.path().join("heavy.toml");
    std::fs::write(&body, toml::to_string(&AnthroConfig { mass: 90.0, ..AnthroConfig::default() }).unwrap()).unwrap();
    let light = cmd_trim(&scenario(dir.path())).unwrap();
    let heavy = cmd_trim(&Scenario { body: Some(body), ..scenario(dir.path()) }).unwrap();
    assert!((heavy.mass_kg - light.mass_kg - 20.0).abs() < 1e-9);
    assert!(heavy.terminal_speed_mps > light.terminal_speed_mps);
}

#[test]
fn zero_area_body_cannot_trim() {
    let mut plant = Plant::nominal();
    for g in plant.model.aero.iter_mut() {
        *g = LimbAeroGeom { a_xz: 0.0, a_xy: 0.0, a_yz: 0.0, a_char: 0.0, l_char: g.l_char };
    }
    let err = trim(&plant, &Posture::neutral(0.5)).unwrap_err();
    assert!(matches!(err, DynamicsError::TrimFailure { .. }), "{err:?}");
    assert_eq!(CliError::from(err).exit_code(), 3);
}

#[test]
fn scenario_errors_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    for text in ["sim = 3\n", "input_groups = \"sideways\"\n", "body = \"missing.toml\"\n", "unknown_key = 1\n", "[sim]\ndt = 0.0\n"] {
        std::fs::write(&path, text).unwrap();
        let e = Scenario::load(&path).unwrap_err();
        assert_eq!(e.exit_code(), 2, "{text}: {e}");
    }
    let sc = Scenario { posture: PostureSource::LiveStream, ..scenario(dir.path()) };
    assert_eq!(cmd_reconstruct(&sc, None).unwrap_err().exit_code(), 2);
    assert_eq!(cmd_trim(&scenario(dir.path())).map(|_| 0).unwrap(), 0);
    assert_eq!(scenario(dir.path()).profile(Some("spiral")).unwrap_err().exit_code(), 2);
}

#[test]
fn scenario_file_paths_are_relative_to_the_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("b.toml"), toml::to_string(&AnthroConfig::default()).unwrap()).unwrap();
    let path = dir.path().join("s.toml");
    std::fs::write(&path, "body = \"b.toml\"\noutput_dir = \"out\"\n[posture]\nsource = \"synthetic\"\nduration = 2.0\npattern = { kind = \"neutral\" }\n").unwrap();
    let sc = Scenario::load(&path).unwrap();
    assert_eq!(sc.output_dir, dir.path().join("out"));
    assert_eq!(sc.body.as_deref(), Some(dir.path().join("b.toml").as_path()));
}

#[test]
fn neutral_posture_descends_steadily() {
    let dir = tempfile::tempdir().unwrap();
    let sc = Scenario { posture: PostureSource::Synthetic { pattern: Pattern::Neutral, duration: 5.0 }, ..scenario(dir.path()) };
    let r = cmd_reconstruct(&sc, None).unwrap();
    assert_eq!(r.samples, 1201);
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let vz = column(&csv, "v_vert");
    let vh = column(&csv, "v_hor");
    assert!((vz[0] - vz[vz.len() - 1]).abs() < 1e-3 * vz[0].abs());
    assert!(vh.iter().all(|v| *v < 1e-3));
}

#[test]
fn turn_pattern_yaws() {
    let dir = tempfile::tempdir().unwrap();
    let sc = Scenario { posture: PostureSource::Synthetic { pattern: Pattern::Turn { angle: 0.3 }, duration: 5.0 }, ..scenario(dir.path()) };
    cmd_reconstruct(&sc, None).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let h = column(&csv, "heading");
    let dt = 1.0 / 240.0;
    let rate = wrap_pi(h[h.len() - 1] - h[h.len() - 241]) / (240.0 * dt);
    assert!(rate.abs() > 0.05, "yaw rate {rate}");
}

#[test]
fn reconstruct_is_bit_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let p = PostureSource::Synthetic { pattern: Pattern::Excitation { amplitude: 0.4 }, duration: 3.0 };
    cmd_reconstruct(&Scenario { posture: p.clone(), ..scenario(a.path()) }, None).unwrap();
    cmd_reconstruct(&Scenario { posture: p, ..scenario(b.path()) }, None).unwrap();
    let read = |d: &Path| std::fs::read(d.join("trajectory.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn estimate_is_bit_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let est = EstimationSection { synthetic: SyntheticSpec { duration: 2.0, ..SyntheticSpec::default() }, ..EstimationSection::default() };
    let run = |d: &Path| {
        let sc = Scenario { estimation: Some(est.clone()), ..scenario(d) };
        cmd_estimate(&sc, None, Some(3)).unwrap();
    };
    run(a.path());
    run(b.path());
    for f in ["coefficients.csv", "reconstruction.csv", "measurements.csv"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn layout_writes_trajectory_even_without_flip() {
    let dir = tempfile::tempdir().unwrap();
    let (r, _) = cmd_layout(&scenario(dir.path()), LayoutKind::Back, true).unwrap();
    assert!(!r.completed);
    assert!(dir.path().join("layout_back.csv").exists());
}

#[test]
fn roll_mode_oscillates_in_roll() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = SweepConfig { mode: OscMode::Roll, dampings: vec![0.2, 6.0], shoulders: vec![60f64.to_radians()], duration: 20.0, bisect_iterations: 0, ..SweepConfig::default() };
    let r = cmd_oscillate(&Scenario { oscillate: sweep, ..scenario(dir.path()) }).unwrap();
    assert!(r.sweep.points.iter().any(|p| p.final_amplitude > 1e-3));
    let hi = r.sweep.points.iter().find(|p| p.damping == 6.0).unwrap();
    assert_eq!(hi.regime, Regime::Decaying);
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_freefall"))
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["trim", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("terminal speed"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "sim = [\n").unwrap();
    let out = bin().args(["trim", "--scenario"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin().args(["estimate", "--profile", "spiral", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn busy_port_is_a_config_error() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = bin().args(["serve", "--port", &port]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
