use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fire_cli::{run, CliError, Command, Precision, RunConfig};

/// Positional-encoding kernel laboratory.
#[derive(Debug, Parser)]
#[command(name = "firelab", version)]
struct Args {
    /// Subcommand to run.
    #[arg(value_enum)]
    command: Command,

    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory (overrides the config; defaults to `firelab_out`).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Overrides the config precision.
    #[arg(long, value_enum)]
    precision: Option<Precision>,
}

fn main_inner(args: Args) -> Result<String, CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(p) = args.precision {
        cfg.precision = p;
    }
    let out = args
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("firelab_out"));
    let outcome = run(args.command, &cfg, &out)?;
    let mut msg = outcome.summary;
    for f in &outcome.files {
        msg.push_str(&format!("\nwrote {}", f.display()));
    }
    Ok(msg)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match main_inner(args) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("firelab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
