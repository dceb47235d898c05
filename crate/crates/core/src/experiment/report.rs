//! Markdown summary of a finished run.

use std::fmt::Write;
use std::path::Path;

use super::config::Scenario;
use super::RunManifest;
use crate::error::{Error, Result};
use crate::spectral::CriterionReport;

/// One-page markdown summary of `manifest`, whose artifacts live in `dir`.
/// Fails when the manifest lists no outputs or any listed file is missing.
pub fn emit_report(manifest: &RunManifest, dir: &Path) -> Result<String> {
    if manifest.outputs.is_empty() {
        return Err(Error::MissingArtifact("manifest lists no outputs".into()));
    }
    for a in &manifest.outputs {
        let p = dir.join(&a.file);
        if !p.is_file() {
            return Err(Error::MissingArtifact(p.display().to_string()));
        }
    }
    let mut s = String::new();
    let _ = writeln!(s, "# {} run\n", manifest.scenario.name());
    let _ = writeln!(
        s,
        "seed {} | tool {} | wall time {:.2} s\n",
        manifest.seed, manifest.tool_version, manifest.wall_time_s
    );
    for line in &manifest.headline {
        let _ = writeln!(s, "- {line}");
    }
    if !manifest.checks.is_empty() {
        let _ = writeln!(s, "\n| check | value | threshold | result |\n|---|---|---|---|");
        for c in &manifest.checks {
            let _ = writeln!(
                s,
                "| {} | {:.4e} | {:.4e} | {} |",
                c.name,
                c.value,
                c.threshold,
                if c.pass { "PASS" } else { "FAIL" }
            );
        }
    }
    if manifest.scenario == Scenario::Criterion {
        let text = std::fs::read_to_string(dir.join("criterion.json"))
            .map_err(|e| Error::MissingArtifact(format!("criterion.json: {e}")))?;
        let report: CriterionReport = serde_json::from_str(&text)?;
        let _ = writeln!(s, "\n| n | q_n | necsuf_n | ratio |\n|---|---|---|---|");
        for r in &report.per_mode {
            let _ = writeln!(
                s,
                "| {} | {:.6e} | {} | {} |",
                r.n,
                r.q_n,
                log_or_plain(r.necsuf, r.ln_necsuf),
                log_or_plain(r.ratio, r.ln_ratio)
            );
        }
        let _ = writeln!(s, "\nverdict: {:?}", report.verdict);
    }
    let _ = writeln!(
        s,
        "\nplot data: {}",
        dir.join("plot.csv").display()
    );
    Ok(s)
}

fn log_or_plain(v: Option<f64>, ln: f64) -> String {
    match v {
        Some(v) => format!("{v:.6e}"),
        None => format!("exp({ln:.4e})"),
    }
}
