//! Config parsing, scenario runs, manifests and reports.

use std::path::{Path, PathBuf};

use fracspde::experiment::{
    emit_report, run_experiment, ExperimentConfig, RunManifest, Scenario, MANIFEST_FILE,
};
use fracspde::Error;

fn scenario_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn field_of(r: Result<ExperimentConfig, Error>) -> String {
    match r {
        Err(Error::Validation { field, .. }) => field,
        other => panic!("expected a validation error, got {other:?}"),
    }
}

const SMALL: &str = r#"
schema_version = 1
scenario = "criterion"
beta = 0.6
t_end = 1.0
n_steps = 128

[model]
preset = "heat"
n_modes = 6
"#;

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut seen = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen.push(cfg.scenario);
    }
    for s in Scenario::ALL {
        assert!(seen.contains(&s), "no shipped config for {}", s.name());
    }
}

#[test]
fn errors_name_the_offending_field() {
    assert_eq!(field_of(ExperimentConfig::parse(&SMALL.replace("beta = 0.6\n", ""))), "beta");
    assert_eq!(field_of(ExperimentConfig::parse(&SMALL.replace("beta = 0.6", "beta = 1.5"))), "beta");
    assert_eq!(field_of(ExperimentConfig::parse(&SMALL.replace("n_modes = 6", "n_modes = \"six\""))), "model.n_modes");
    assert_eq!(field_of(ExperimentConfig::parse(&SMALL.replace("n_steps = 128", "n_steps = 4"))), "n_steps");
    assert_eq!(field_of(ExperimentConfig::parse(&format!("{SMALL}\n[tolerances]\nsteering = -1.0\n"))), "tolerances.steering");
    assert!(ExperimentConfig::parse(&format!("extra = 1\n{SMALL}")).is_err());
}

#[test]
fn json_and_toml_agree() {
    let toml = ExperimentConfig::parse(SMALL).unwrap();
    let json = serde_json::to_string(&toml).unwrap();
    assert!(json.starts_with('{'));
    assert_eq!(ExperimentConfig::parse(&json).unwrap(), toml);
}

#[test]
fn criterion_run_writes_artifacts_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(SMALL).unwrap();
    let manifest = run_experiment(&cfg, dir.path()).unwrap();
    assert!(manifest.all_pass());
    for a in &manifest.outputs {
        assert!(dir.path().join(&a.file).is_file(), "{}", a.file);
    }
    let loaded = RunManifest::load(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(loaded, manifest);
    let text = emit_report(&loaded, dir.path()).unwrap();
    assert!(text.contains("| n | q_n | necsuf_n | ratio |"), "{text}");
    assert!(text.contains("verdict: Equivalent"), "{text}");
    let mode_rows = text.lines().filter(|l| l.starts_with("| ") && l.as_bytes()[2].is_ascii_digit()).count();
    assert_eq!(mode_rows, 6, "{text}");
}

#[test]
fn golden_config_is_reproducible() {
    let cfg = ExperimentConfig::load(&scenario_file("criterion_heat.toml")).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m = run_experiment(&cfg, a.path()).unwrap();
    run_experiment(&cfg, b.path()).unwrap();
    for art in &m.outputs {
        let read = |d: &Path| std::fs::read(d.join(&art.file)).unwrap();
        assert_eq!(read(a.path()), read(b.path()), "{}", art.file);
    }
}

#[test]
fn report_refuses_incomplete_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(SMALL).unwrap();
    let manifest = run_experiment(&cfg, dir.path()).unwrap();

    let mut empty = manifest.clone();
    empty.outputs.clear();
    assert!(matches!(emit_report(&empty, dir.path()), Err(Error::MissingArtifact(_))));

    std::fs::remove_file(dir.path().join(&manifest.outputs[0].file)).unwrap();
    assert!(matches!(emit_report(&manifest, dir.path()), Err(Error::MissingArtifact(_))));
    assert!(matches!(
        RunManifest::load(&dir.path().join("absent.json")),
        Err(Error::MissingArtifact(_))
    ));
}

#[test]
fn control_and_moment_scenarios_pass_their_checks() {
    for name in ["control_heat.toml", "moment_heat.toml"] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::load(&scenario_file(name)).unwrap();
        let m = run_experiment(&cfg, dir.path()).unwrap();
        assert!(m.all_pass(), "{name}: {:?}", m.checks);
        assert!(!m.checks.is_empty());
        emit_report(&m, dir.path()).unwrap();
    }
}

#[test]
fn singular_config_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::load(&scenario_file("criterion_singular.toml")).unwrap();
    let m = run_experiment(&cfg, dir.path()).unwrap();
    assert!(emit_report(&m, dir.path()).unwrap().contains("verdict: Singular"));
}
