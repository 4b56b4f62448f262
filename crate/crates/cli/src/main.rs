//! `tagclock` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use toml::Value;

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub const VALIDATION: u8 = 2;
    pub const RECOVERY: u8 = 3;
    pub const IO: u8 = 4;

    pub fn validation(message: impl Into<String>) -> Self {
        Self { code: Self::VALIDATION, message: message.into() }
    }

    pub fn recovery(message: impl Into<String>) -> Self {
        Self { code: Self::RECOVERY, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { code: Self::IO, message: message.into() }
    }
}

impl From<tagclock::Error> for Failure {
    fn from(e: tagclock::Error) -> Self {
        use tagclock::Error as E;
        let code = match &e {
            E::InvalidArgument(_) | E::RateExceedsDeadTime { .. } => Self::VALIDATION,
            E::Io { .. } | E::Parse { .. } | E::Serde(_) => Self::IO,
            E::NoTags | E::InsufficientData(_) | E::AlignmentFailed { .. } | E::Stage { .. } => Self::RECOVERY,
        };
        Self { code, message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "tagclock", version, about = "Clock recovery from single-photon time tags")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Worker threads for parallel sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct ConfigArgs {
    /// Flat TOML settings file.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set rate_hz=1e6`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = config::parse_override)]
    pub set: Vec<(String, Value)>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a tag stream and its ground truth.
    Simulate(commands::SimulateArgs),
    /// Recover the clock: FFT estimate, optimizer, drift correction.
    Recover(commands::RecoverArgs),
    /// Track the optimal demodulation frequency over sliding frames.
    Track(commands::TrackArgs),
    /// Demodulate, align and report the QBER of tag files.
    Qber(commands::QberArgs),
    /// Sweep the coherence-time grid.
    Coherence(commands::CoherenceArgs),
    /// Finite-key secret key rate of one block.
    Skr(commands::SkrArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    if let Some(n) = cli.threads {
        std::env::set_var("RAYON_NUM_THREADS", n.max(1).to_string());
    }
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Recover(a) => commands::recover(a),
        Command::Track(a) => commands::track(a),
        Command::Qber(a) => commands::qber(a),
        Command::Coherence(a) => commands::coherence(a),
        Command::Skr(a) => commands::skr(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
