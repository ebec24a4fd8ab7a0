//! Publisher-side manuscript checker.
//!
//! ```text
//! pubtool verify --article 2006ApJ...650..100S --verifier http://links.example.org/ \
//!     --feed-out feed.tsv paper.tex sections/*.tex
//! ```
//!
//! Exit status: 0 when every identifier verified, 2 when any is malformed,
//! unknown or absent (or a file could not be read), 3 when only unavailable
//! centers or an unreachable verifier stand in the way.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use url::Url;

use dslink_core::manuscript::{verify_manuscript, VerifierClient};

#[derive(Parser)]
#[command(name = "pubtool", version, about = "Check dataset identifiers in LaTeX manuscripts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Tsv,
}

#[derive(Subcommand)]
enum Command {
    /// Scan manuscripts for \dataset{...} and verify every identifier.
    Verify {
        /// Article identifier written into the correlation feed.
        #[arg(long)]
        article: String,
        /// Master verifier base URL (or its /verify endpoint).
        #[arg(long)]
        verifier: Url,
        /// Where to write `article<TAB>dataset` lines for valid identifiers.
        #[arg(long)]
        feed_out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        #[arg(long, default_value_t = 30_000)]
        timeout_ms: u64,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[tokio::main]
async fn main() -> ExitCode {
    let Command::Verify {
        article,
        verifier,
        feed_out,
        format,
        timeout_ms,
        files,
    } = Cli::parse().command;

    let client = VerifierClient::new(&verifier, Duration::from_millis(timeout_ms));
    let report = match verify_manuscript(&files, &client).await {
        Ok(r) => r,
        Err(e) => {
            eprintln!("pubtool: {e}");
            return ExitCode::from(3);
        }
    };
    for p in &report.file_problems {
        eprintln!("pubtool: {}: {}", p.file.display(), p.message);
    }
    match format {
        Format::Text => print!("{}", report.render_text()),
        Format::Tsv => print!("{}", report.render_tsv()),
    }
    if let Some(path) = feed_out {
        if let Err(e) = std::fs::write(&path, report.feed(&article)) {
            eprintln!("pubtool: cannot write {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    ExitCode::from(report.exit_code() as u8)
}
