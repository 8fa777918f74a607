//! Command-line front end for the passive-QKD simulation toolkit.

use clap::Parser;
use passive_qkd::cli::{self, Invocation, OutputFormat};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(
    name = "pqkd",
    version,
    about = "Simulation and security analysis for fully-passive QKD sources"
)]
struct Args {
    /// Path to the TOML run configuration (the scenario lives inside).
    #[arg(long)]
    config: PathBuf,

    /// Seed for the Monte-Carlo verification streams.
    #[arg(long, default_value_t = 1)]
    seed: u64,

    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Output format.
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,

    /// Worker threads for scan points (defaults to all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let invocation = Invocation {
        config_path: args.config,
        seed: args.seed,
        out: args.out,
        format: args.format,
        jobs: args.jobs,
    };
    match cli::run(&invocation) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pqkd: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
