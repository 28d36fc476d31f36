//! `firecast` command line.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! validation error, 3 numeric failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use firecast_core::pipeline::{self, RunConfig, Scale};
use firecast_core::CoreError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Debug, Args, Clone)]
struct Common {
    /// JSON or `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// desk | paper
    #[arg(long, global = true)]
    scale: Option<Scale>,
    /// Ensemble members per step.
    #[arg(long, global = true)]
    ensemble: Option<usize>,
    /// Burned-mask threshold in (0, 1).
    #[arg(long, global = true)]
    threshold: Option<f32>,
    /// Worker cap; does not change results.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Retained scenarios to simulate.
    #[arg(long, global = true)]
    scenarios: Option<usize>,
    /// Generator updates.
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    batch: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the oracle and write raw arrival-time fields.
    Simulate,
    /// Encode a simulate tree into frames and a train/test split.
    BuildDataset {
        #[arg(long)]
        input: PathBuf,
    },
    /// Train the one-step model and the baseline.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Ensemble rollouts for the test split.
    Predict {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Score predictions against a dataset and write metrics.csv.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
    },
    /// Finite-difference and closed-form loss checks.
    Selfcheck,
    /// simulate, build-dataset, train, predict and evaluate on a small run.
    Smoke,
}

#[derive(Debug, Parser)]
#[command(name = "firecast", version, about = "Wildfire spread simulation, training and ensemble prediction")]
struct Full {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

fn exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Stage { source, .. } => exit_code(source),
        e if e.is_numeric() => EXIT_NUMERIC,
        CoreError::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn resolve(common: &Common, smoke: bool) -> Result<RunConfig, CoreError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if smoke {
        cfg = cfg.smoke_sized();
    }
    if let Some(v) = common.seed {
        cfg.seed = Some(v);
    }
    if let Some(v) = common.scale {
        cfg.scale = v;
    }
    if let Some(v) = common.ensemble {
        cfg.ensemble = v;
    }
    if let Some(v) = common.threshold {
        cfg.threshold = v;
    }
    if let Some(v) = common.jobs {
        cfg.jobs = Some(v);
    }
    if let Some(v) = common.scenarios {
        cfg.scenarios = Some(v);
    }
    if let Some(v) = common.steps {
        cfg.steps = v;
    }
    if let Some(v) = common.batch {
        cfg.batch = v;
    }
    cfg.resolve()
}

fn out_dir(common: &Common) -> Result<&Path, CoreError> {
    common
        .out
        .as_deref()
        .ok_or_else(|| CoreError::Config("--out is required".into()))
}

fn execute(full: Full) -> Result<(), CoreError> {
    let c = &full.common;
    if let Command::Selfcheck = full.command {
        let seed = c.seed.unwrap_or(0);
        let checks = pipeline::selfcheck(seed)?;
        let mut failed = 0;
        for ch in &checks {
            println!(
                "{} {:<48} {:.3e} (tolerance {:.0e})",
                if ch.passed { "PASS" } else { "FAIL" },
                ch.name,
                ch.value,
                ch.tolerance
            );
            failed += usize::from(!ch.passed);
        }
        if failed > 0 {
            return Err(CoreError::Numeric(format!("{failed} self-checks failed")));
        }
        return Ok(());
    }
    let cfg = resolve(c, matches!(full.command, Command::Smoke))?;
    let out = out_dir(c)?;
    match &full.command {
        Command::Simulate => {
            let r = pipeline::simulate(&cfg, out)?;
            println!(
                "simulated {} runs, kept {} ({:.1}%), {} out of bounds, {} unburnable",
                r.simulated,
                r.retained,
                100.0 * r.retained_fraction(),
                r.out_of_bounds,
                r.unburnable
            );
        }
        Command::BuildDataset { input } => {
            let ds = pipeline::build_dataset(&cfg, input, out)?;
            println!("{} scenarios: {} train, {} test", ds.scenarios.len(), ds.train.len(), ds.test.len());
        }
        Command::Train { data } => {
            let (cgan, ae) = pipeline::train(&cfg, data, out)?;
            println!("trained {} generator steps and {} baseline steps", cgan.generator_steps, ae.steps);
        }
        Command::Predict { models, data } => {
            let n = pipeline::predict(&cfg, models, data, out)?;
            println!("wrote predictions for {n} scenarios");
        }
        Command::Evaluate { truth, pred } => {
            let rows = pipeline::evaluate(&cfg, truth, pred, out)?;
            println!("wrote {} metric rows", rows.len());
        }
        Command::Smoke => {
            let r = pipeline::smoke(&cfg, out)?;
            println!("{}", serde_json::to_string_pretty(&r.metrics).map_err(CoreError::from)?);
        }
        Command::Selfcheck => unreachable!("handled above"),
    }
    Ok(())
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let full = match Full::try_parse_from(argv) {
        Ok(f) => f,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(full) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["firecast"]), EXIT_USAGE);
        assert_eq!(run(["firecast", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["firecast", "simulate", "--out", "/nonexistent/x"]), EXIT_USAGE);
        assert_eq!(run(["firecast", "--help"]), EXIT_OK);
    }

    #[test]
    fn error_classes_map_to_codes() {
        assert_eq!(exit_code(&CoreError::Config("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&CoreError::Data("x".into())), EXIT_DATA);
        assert_eq!(exit_code(&CoreError::Numeric("x".into())), EXIT_NUMERIC);
        assert_eq!(exit_code(&CoreError::Numeric("x".into()).in_stage("train")), EXIT_NUMERIC);
    }

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.conf");
        std::fs::write(&p, "seed = 3\nensemble = 7 # members\nscale = desk\n").unwrap();
        let full = Full::try_parse_from(["firecast", "simulate", "--config", p.to_str().unwrap(), "--ensemble", "2"]).unwrap();
        let cfg = resolve(&full.common, false).unwrap();
        assert_eq!((cfg.seed, cfg.ensemble), (Some(3), 2));
        let full = Full::try_parse_from(["firecast", "predict", "--models", "m", "--data", "d", "--seed", "1"]).unwrap();
        assert_eq!(resolve(&full.common, false).unwrap().ensemble, 5);
    }
}
