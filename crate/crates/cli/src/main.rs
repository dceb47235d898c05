//! `fracspde`: runs experiment scenarios from config files and summarizes
//! their manifests.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fracspde::experiment::{
    emit_report, run_experiment, ExperimentConfig, RunManifest, Scenario, MANIFEST_FILE,
};
use fracspde::Error;

/// Worker threads for the parallel Monte Carlo loops.
const THREADS_ENV: &str = "FRACSPDE_THREADS";

#[derive(Parser)]
#[command(name = "fracspde", version, about = "Experiments for evolution equations driven by fractional Brownian motion")]
struct Cli {
    /// Print the available scenarios and exit.
    #[arg(long)]
    list_scenarios: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a TOML or JSON config.
    Run {
        config: PathBuf,
        /// Replaces the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for artifacts and the manifest.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Summarize a finished run from its manifest.
    Report { manifest: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation { .. }
        | Error::InvalidParameter { .. }
        | Error::InvalidModel(_)
        | Error::GridTooCoarse { .. }
        | Error::GridMismatch(_)
        | Error::DimensionMismatch { .. }
        | Error::MissingArtifact(_)
        | Error::Json(_)
        | Error::Io(_) => 2,
        Error::ResourceCap { .. } => 4,
        _ => 3,
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| Error::Validation {
        field: THREADS_ENV.into(),
        reason: format!("`{raw}` is not a positive integer"),
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Validation { field: THREADS_ENV.into(), reason: e.to_string() })
}

fn run(config: &Path, seed: Option<u64>, out: &Path) -> Result<bool, Error> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let manifest = run_experiment(&cfg, out)?;
    print!("{}", emit_report(&manifest, out)?);
    println!("manifest: {}", out.join(MANIFEST_FILE).display());
    Ok(manifest.all_pass())
}

fn report(path: &Path) -> Result<(), Error> {
    let manifest = RunManifest::load(path)?;
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    print!("{}", emit_report(&manifest, dir)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list_scenarios {
        for s in Scenario::ALL {
            println!("{:<13} {}", s.name(), s.description());
        }
        return ExitCode::SUCCESS;
    }
    let outcome = configure_threads().and_then(|()| match &cli.command {
        Some(Command::Run { config, seed, out }) => run(config, *seed, out),
        Some(Command::Report { manifest }) => report(manifest).map(|()| true),
        None => Err(Error::Validation {
            field: "command".into(),
            reason: "expected `run`, `report` or --list-scenarios".into(),
        }),
    });
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: at least one configured check failed");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
