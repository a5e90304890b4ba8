//! Binary-level checks: exit codes, determinism of emitted bundles, and the
//! subcommand surfaces.

use std::path::Path;
use std::process::Command;

fn blochdyn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blochdyn"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL_SCENARIO: &str = r#"
name = "small"

[lattice]
depth = 5.0
wavelength_nm = 1064.0
mass_amu = 86.909180527

[grid]
sites = 128
points_per_site = 16

[propagation]
dt_tr = 0.002
duration_us = 100.0
sample_us = 4.0
nonlinearity = 0.0
guard_sites = 10
dump_snapshots = false

[tof]
noise = 0.01

[analysis]
fit_window_us = 100.0
"#;

#[test]
fn validate_accepts_a_good_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SCENARIO);
    let out = blochdyn().args(["validate", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("configuration valid"));
}

#[test]
fn validation_failures_use_exit_code_two_and_enumerate_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[lattice]
depth = -3.0
wavelength_nm = 1064.0
"#,
    );
    let out = blochdyn().args(["validate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stdout).to_string()
        + &String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("lattice.depth"), "{text}");
    assert!(text.contains("mass_amu"), "{text}");
}

#[test]
fn oversized_time_step_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[lattice]
depth = 9.4
wavelength_nm = 1064.0
mass_amu = 86.909180527

[propagation]
dt_tr = 0.1
duration_us = 100.0
sample_us = 4.0
nonlinearity = 0.0
guard_sites = 50
dump_snapshots = false
"#,
    );
    let out = blochdyn().args(["validate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stdout).to_string()
        + &String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("s*dt/t_r"), "{text}");
}

#[test]
fn runtime_failures_use_exit_code_one() {
    let out = blochdyn()
        .args(["reproduce", "fig9", "--out", "/tmp/nonexistent-scenario"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bands_subcommand_writes_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SCENARIO);
    let out_dir = dir.path().join("out");
    let out = blochdyn()
        .args(["bands", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(out_dir.join("bands.csv")).unwrap();
    assert!(table.starts_with("k_over_kr,E_1_over_Er"));
    assert!(table.lines().count() > 200);
    assert!(out_dir.join("manifest.json").exists());
}

#[test]
fn scenario_bundles_are_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SCENARIO);
    for run in ["a", "b"] {
        let out = blochdyn()
            .args(["run", "--config"])
            .arg(&cfg)
            .args(["--out"])
            .arg(dir.path().join(run))
            .args(["--seed", "7"])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let names = [
        "bands.csv",
        "trace_direct.csv",
        "trace_measured.csv",
        "fits.json",
        "residuals.csv",
        "guide.csv",
        "summary.json",
        "manifest.json",
        "config.toml",
        "diffraction_fits.json",
    ];
    for name in names {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between reruns");
        assert!(!a.is_empty());
    }
}

#[test]
fn sweeps_emit_per_point_bundles_and_a_merged_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "{SMALL_SCENARIO}
[sweep]
parameter = \"force.accel\"
values = [6.0, 12.0]
"
        ),
    );
    let out_dir = dir.path().join("sweep");
    let out = blochdyn()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("point_000/summary.json").exists());
    assert!(out_dir.join("point_001/summary.json").exists());
    let summary = std::fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.contains("force.accel"));
}

#[test]
fn analyze_fits_an_external_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_SCENARIO);
    // synthetic two-sinusoid trace in recoil units
    let mut text = String::from("t,v\n");
    for i in 0..80 {
        let t = i as f64 * 0.05;
        let v = 0.03 * (4.5 * t + 0.2).sin() + 0.2 * (0.7 * t).sin();
        text.push_str(&format!("{t},{v}\n"));
    }
    let trace_path = dir.path().join("trace.csv");
    std::fs::write(&trace_path, text).unwrap();

    let out_dir = dir.path().join("out");
    let out = blochdyn()
        .args(["analyze", "--config"])
        .arg(&cfg)
        .args(["--trace"])
        .arg(&trace_path)
        .args(["--out"])
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fits: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("fits.json")).unwrap())
            .unwrap();
    let omega_fast = fits["two_sine"]["omega_fast"].as_f64().unwrap();
    assert!((omega_fast - 4.5).abs() < 1e-3, "omega_fast = {omega_fast}");
    assert!(out_dir.join("residuals.csv").exists());
}
