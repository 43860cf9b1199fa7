use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use biredux::cli::{config::parse_config, run_subcommand, Subcommand};
use biredux::Error;

const SEED_ENV: &str = "BIREDUX_SEED";

#[derive(Debug, Parser)]
#[command(name = "biredux", version, about = "Domain-adaptive whitening with orthogonality regularization")]
struct Args {
    /// One of: train, diagnose, whiten-check, ortho-demo, gen-data
    #[arg(value_parser = parse_subcommand)]
    command: Subcommand,
    /// JSON configuration document
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output_dir`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for every random stream (overrides the environment and the config)
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_subcommand(s: &str) -> Result<Subcommand, String> {
    s.parse().map_err(|_| {
        let names: Vec<_> = Subcommand::ALL.iter().map(|c| c.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

fn execute(args: Args) -> Result<(), Error> {
    let mut cfg = parse_config(&args.config)?;
    let env_seed = match std::env::var(SEED_ENV) {
        Ok(v) => Some(v.trim().parse::<u64>().map_err(|_| Error::Config {
            key: SEED_ENV.into(),
            message: format!("`{v}` is not an unsigned integer"),
        })?),
        Err(_) => None,
    };
    if let Some(seed) = args.seed.or(env_seed) {
        cfg.override_seed(seed);
    }
    if let Some(out) = args.out {
        cfg.output_dir = out;
    }
    run_subcommand(args.command, &cfg)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
