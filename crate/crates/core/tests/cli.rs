use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sicsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sicsim"))
        .args(args)
        .env_remove("SICSIM_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn list_shows_bundled_scenarios() {
    let o = sicsim(&["list"]);
    assert!(o.status.success());
    let out = stdout(&o);
    for name in ["circulator_20mhz", "dual_antenna_100mhz", "soi_recovery", "tracking_step", "pa_two_tone"] {
        assert!(out.contains(name), "{name} missing from\n{out}");
    }
    assert!(out.lines().count() >= 8);
}

#[test]
fn preset_dump_is_a_loadable_config() {
    let o = sicsim(&["preset", "tracking_ramp", "--dump"]);
    assert!(o.status.success());
    let cfg = sicsim::scenario::ScenarioConfig::parse(&stdout(&o)).unwrap();
    assert_eq!(cfg.name, "tracking_ramp");
}

#[test]
fn unknown_preset_is_a_config_error() {
    let o = sicsim(&["preset", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope"));
}

#[test]
fn missing_field_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let src = sicsim::scenario::bundled_source("circulator_20mhz").unwrap();
    let broken: String = src
        .lines()
        .filter(|l| !l.starts_with("sample_rate_hz"))
        .map(|l| format!("{l}\n"))
        .collect();
    let path = dir.path().join("broken.toml");
    fs::write(&path, broken).unwrap();
    let o = sicsim(&["run", path.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sample_rate_hz"), "{}", stderr(&o));
}

#[test]
fn divergence_exits_with_its_own_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = sicsim::scenario::bundled("dual_antenna_20mhz").unwrap();
    cfg.lms.mu = 1e9;
    let path = dir.path().join("hot.toml");
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    let o = sicsim(&[
        "run",
        path.to_str().unwrap(),
        "--duration",
        "2e-4",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("reduce mu"), "{}", stderr(&o));
}

fn run_into(dir: &Path) {
    let o = sicsim(&[
        "run",
        "circulator_20mhz",
        "--duration",
        "5e-4",
        "--seed",
        "9",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_into(a.path());
    run_into(b.path());
    let mut names: Vec<_> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n == "report.json"));
    assert!(names.iter().any(|n| n == "trace.csv"));
    for n in names {
        let x = fs::read(a.path().join(&n)).unwrap();
        let y = fs::read(b.path().join(&n)).unwrap();
        assert!(x == y, "{n:?} differs");
    }
    let report = fs::read_to_string(a.path().join("report.json")).unwrap();
    assert!(report.contains("\"seed\": 9"));
}

#[test]
fn out_dir_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_sicsim"))
        .args(["run", "pa_two_tone", "--duration", "2e-4"])
        .env("SICSIM_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("report.json").exists());
}
