use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use hiershare::curve::{validate_curve, CurveParams};
use hiershare_cli::config::parse_json;
use hiershare_cli::runner::{self, RunError, RunOptions};

#[derive(Parser)]
#[command(
    name = "hiershare",
    version,
    about = "Hierarchical threshold secret sharing simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write `<name>.report` and `<name>.txt`.
    Run {
        /// Scenario JSON file.
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of epochs.
        #[arg(long)]
        epochs: Option<u64>,
        /// Output directory.
        #[arg(long, env = "HIERSHARE_OUT_DIR", default_value = ".")]
        out: PathBuf,
        /// Save a snapshot after this many epochs have completed.
        #[arg(long, value_name = "EPOCH")]
        save_at: Option<u64>,
        /// Continue from a snapshot of the same scenario.
        #[arg(long, value_name = "FILE")]
        resume: Option<PathBuf>,
    },
    /// Check a named curve profile or a JSON file of curve parameters.
    VerifyCurve { profile: String },
}

enum Failure {
    /// Bad input: exit 1.
    Input(anyhow::Error),
    /// The run or check completed and found a problem: exit 2.
    Check(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

/// Writes to stdout, tolerating a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn run(opts: RunOptions) -> Result<(), Failure> {
    let outcome = runner::run(&opts).map_err(|e: RunError| Failure::Input(e.into()))?;
    let mut text = outcome.report.table();
    text.push_str(&format!(
        "report: {}\ntable: {}\n",
        outcome.report_path.display(),
        outcome.table_path.display()
    ));
    if let Some(path) = &outcome.snapshot_path {
        text.push_str(&format!("snapshot: {}\n", path.display()));
    }
    emit(&text);
    if outcome.report.succeeded() {
        return Ok(());
    }
    let summary = outcome.report.summary.as_ref().expect("finished report");
    let mut problems: Vec<String> = summary
        .invariant_violations
        .iter()
        .map(|v| {
            format!(
                "invariant {} violated at epoch {}: {}",
                v.invariant, v.epoch, v.detail
            )
        })
        .collect();
    if !summary.reconstruction_correct {
        problems.push("final reconstruction did not recover the secret".into());
    }
    Err(Failure::Check(problems.join("\n")))
}

fn verify_curve(profile: &str) -> Result<(), Failure> {
    let path = Path::new(profile);
    let params = if path.is_file() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {profile}"))?;
        parse_json::<CurveParams>(&text, profile).map_err(anyhow::Error::from)?
    } else {
        CurveParams::named(profile)
            .with_context(|| format!("{profile} is neither a file nor a known profile"))?
    };
    let report = validate_curve(&params);
    let mut text = String::new();
    for check in &report.checks {
        let mark = if check.passed { "ok  " } else { "FAIL" };
        text.push_str(&format!("{mark} {:<28} {}\n", check.name, check.detail));
    }
    if report.is_valid() {
        text.push_str("valid\n");
    }
    emit(&text);
    if report.is_valid() {
        Ok(())
    } else {
        Err(Failure::Check(format!("invalid curve: {report}")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            epochs,
            out,
            save_at,
            resume,
        } => run(RunOptions {
            scenario,
            seed,
            epochs,
            out,
            save_at,
            resume,
        }),
        Command::VerifyCurve { profile } => verify_curve(&profile),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Check(message)) => {
            eprintln!("{message}");
            ExitCode::from(2)
        }
    }
}
