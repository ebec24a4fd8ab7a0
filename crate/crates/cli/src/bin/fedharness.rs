//! Runs federation scenario files.
//!
//! ```text
//! fedharness run tests/scenarios/permanence.scn
//! ```
//!
//! Exit status: 0 when every expectation held, 1 when any failed, 2 when the
//! scenario is invalid or could not be run.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dslink_core::harness::{run_text, RunError};

#[derive(Parser)]
#[command(name = "fedharness", version, about = "Scripted end-to-end runs of a simulated federation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its report.
    Run {
        scenario: PathBuf,
        /// Also write the report here.
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
}

#[tokio::main]
async fn main() -> ExitCode {
    let Command::Run { scenario, report_out } = Cli::parse().command;
    let text = match std::fs::read_to_string(&scenario) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("fedharness: {}: {e}", scenario.display());
            return ExitCode::from(2);
        }
    };
    let name = scenario
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    let report = match run_text(&name, &text).await {
        Ok(r) => r,
        Err(e @ RunError::Invalid(_)) => {
            eprintln!("fedharness: {}: {e}", scenario.display());
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("fedharness: {e}");
            return ExitCode::from(2);
        }
    };
    let rendered = report.render();
    print!("{rendered}");
    if let Some(path) = report_out {
        if let Err(e) = std::fs::write(&path, &rendered) {
            eprintln!("fedharness: cannot write {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
