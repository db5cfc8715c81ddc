//! `groupdyn`: file-based pipeline over the group-dynamics library.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

mod commands;
mod config;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "groupdyn", version, about = "Group conversation dynamics pipeline")]
pub struct Cli {
    /// Master random seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Slot width in seconds (default 0.1; observation files carry their own).
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a session: trajectory plus synthetic badge observations.
    Simulate,
    /// Gibbs sampling of rates, emissions and the latent turn path.
    Infer {
        #[arg(long)]
        observations: PathBuf,
        /// Number of chains (overrides the config); more than one adds a
        /// cross-chain PSRF column.
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        sweeps: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
    },
    /// Align badge streams and segment them into turns and backchannels.
    Segment {
        /// Directory of `badge_<id>.csv` files.
        #[arg(long)]
        badges: PathBuf,
    },
    /// Classify conversational events and count them per window.
    Extract(ExtractArgs),
    /// Fit the hazard model to per-question survival records.
    Survival {
        #[arg(long)]
        records: PathBuf,
    },
    /// Percentile rows of per-minute statistics from a set of groups.
    Table1 {
        #[arg(long)]
        groups: PathBuf,
    },
    /// Play the 20-questions task at a sweep of question qualities.
    Tasksim {
        /// Window counts of a session; writes per-question survival records.
        #[arg(long)]
        counts: Option<PathBuf>,
    },
    /// Table, hazard fit and regressions over a set of groups.
    Report {
        #[arg(long)]
        groups: PathBuf,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ExtractArgs {
    #[arg(long)]
    pub turns: Option<PathBuf>,
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

fn library_code(e: &groupdyn::Error) -> u8 {
    use groupdyn::Error as E;
    match e {
        E::InvalidConfig(_) => 1,
        E::Numerical(_) | E::Domain(_) | E::RankDeficient(_) | E::UndefinedTest(_) => 3,
        _ => 2,
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.code;
        }
        if let Some(l) = cause.downcast_ref::<groupdyn::Error>() {
            return library_code(l);
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
