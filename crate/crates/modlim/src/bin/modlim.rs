//! `modlim <experiment> [--config FILE] [--set key=value ...] [--seed N] [--out DIR]`
//!
//! Runs one experiment and prints a PASS/FAIL line per check. Exit codes:
//! 0 all checks passed, 1 a check failed or a sweep point errored,
//! 2 configuration problem, 3 numerical fault.

use std::path::PathBuf;

use clap::Parser;
use modlim::config::{parse_config_with_overrides, Experiment};
use modlim::error::{ModlimError, Result};
use modlim::runner::{run, RunOutcome};

#[derive(Parser)]
#[command(
    name = "modlim",
    about = "Numerical experiments for the delta-interaction mean-field limit",
    after_help = "Experiments: scattering, euler, nls, nbody, modenergy, rate-sweep, \
                  verify-lemmas.\nEnvironment: MODLIM_WORKERS overrides the sweep \
                  parallelism configured under output.workers."
)]
struct Cli {
    /// Which experiment to run.
    experiment: String,

    /// TOML config file; omitted = experiment defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override a config key, e.g. --set params.hbar=0.125 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Override the RNG seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn execute(cli: &Cli) -> Result<RunOutcome> {
    let experiment = Experiment::from_name(&cli.experiment)?;
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| {
            ModlimError::config(format!("reading {}: {e}", path.display()))
        })?,
        None => String::new(),
    };
    let mut cfg = parse_config_with_overrides(experiment, &text, &cli.set)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    run(&cfg)
}

fn main() {
    let cli = Cli::parse();
    let code = match execute(&cli) {
        Ok(outcome) => {
            for check in &outcome.checks {
                println!("{}", check.summary_line());
            }
            for failure in &outcome.failures {
                println!("FAIL point {} | {}", failure.point, failure.error);
            }
            println!(
                "{}: wrote {}",
                if outcome.pass { "ok" } else { "suite failure" },
                outcome.out_dir.join("manifest.json").display()
            );
            if outcome.pass {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
