//! The `fracspde` binary end to end: exit codes, thread-count independence
//! and the report command.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn fracspde(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fracspde"));
    cmd.args(args).env_remove("FRACSPDE_THREADS");
    if let Some(t) = threads {
        cmd.env("FRACSPDE_THREADS", t);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn lists_every_scenario() {
    let out = fracspde(&["--list-scenarios"], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["criterion", "simulate", "control", "moment", "density", "strongfeller"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing from\n{text}");
    }
}

#[test]
fn artifacts_do_not_depend_on_thread_count() {
    let cfg = scenario("criterion_heat.toml");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (d, t) in dirs.iter().zip(["1", "4"]) {
        let out = fracspde(&["run", cfg.to_str().unwrap(), "--out", d.path().to_str().unwrap()], Some(t));
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let mut names: Vec<_> = std::fs::read_dir(dirs[0].path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .filter(|n| n != "manifest.json")
        .collect();
    names.sort();
    assert!(names.len() >= 3, "{names:?}");
    for n in &names {
        let a = std::fs::read(dirs[0].path().join(n)).unwrap();
        let b = std::fs::read(dirs[1].path().join(n)).unwrap();
        assert_eq!(a, b, "{n:?}");
    }
}

#[test]
fn report_command_reads_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("criterion_singular.toml");
    let run = fracspde(&["run", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(run.status.code(), Some(0));
    let manifest = dir.path().join("manifest.json");
    let out = fracspde(&["report", manifest.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("verdict: Singular"));

    let missing = fracspde(&["report", dir.path().join("nope.json").to_str().unwrap()], None);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn missing_beta_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "schema_version = 1\nscenario = \"criterion\"\nt_end = 1.0\nn_steps = 64\n[model]\npreset = \"heat\"\nn_modes = 4\n",
    );
    let out = fracspde(&["run", &cfg, "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("beta"));
}

#[test]
fn oversized_run_exits_with_resource_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "schema_version = 1\nscenario = \"simulate\"\nbeta = 0.6\nt_end = 1.0\nn_steps = 256\nn_paths = 20000\n[model]\npreset = \"heat\"\nn_modes = 8\n",
    );
    let out = fracspde(&["run", &cfg, "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_thread_count_is_rejected() {
    let out = fracspde(&["run", scenario("criterion_heat.toml").to_str().unwrap()], Some("zero"));
    assert_eq!(out.status.code(), Some(2));
}
