use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pfedsop_core::config::parse_config_with_env;
use pfedsop_core::runner;
use pfedsop_core::verify;

#[derive(Parser)]
#[command(
    name = "pfedsop",
    about = "Deterministic personalized federated learning simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a config file and write CSV outputs.
    Run {
        /// Path to a flat `key = value` config file.
        config: PathBuf,
        /// Worker threads for round-internal parallelism (0 = one per
        /// core). Never affects results.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Run the numerical oracle suites and report pass/fail per suite.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(config_path: &PathBuf, threads: usize) -> ExitCode {
    let text = match std::fs::read_to_string(config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", config_path.display());
            return ExitCode::FAILURE;
        }
    };
    let config = match parse_config_with_env(&text, std::env::vars()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    for warning in config.warnings() {
        eprintln!("warning: {warning}");
    }
    match runner::execute(&config, threads) {
        Ok(artifacts) => {
            let rounds = artifacts.output.rounds.len();
            if let Some(last) = artifacts.output.rounds.last() {
                println!(
                    "{} rounds, final avg loss {:.6}, final avg accuracy {:.6}, best-mean {:.6}",
                    rounds,
                    last.avg_train_loss,
                    last.avg_test_accuracy,
                    artifacts.output.best.overall().unwrap_or(f64::NAN),
                );
            } else {
                println!("0 rounds requested; nothing to do");
            }
            for f in artifacts.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run_verify(seed: u64) -> ExitCode {
    let reports = verify::run_all(seed);
    let mut all_passed = true;
    for report in &reports {
        println!("{report}");
        all_passed &= report.passed;
    }
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, threads } => run(&config, threads),
        Command::Verify { seed } => run_verify(seed),
    }
}
