//! `semimarkov <command> --config <path>`: config-driven experiments.
//!
//! Exit codes: 0 when every declared tolerance passes, 1 when one fails,
//! 2 on invalid input or a solver error.

mod artifact;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use artifact::Artifacts;
use config::Command;

#[derive(Parser, Debug)]
#[command(
    name = "semimarkov",
    version,
    about = "Semi-Markov CTRW solvers and samplers"
)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment config
    #[arg(long)]
    config: PathBuf,
    /// Output path prefix; overrides `output` in the config
    #[arg(long)]
    out: Option<String>,
    /// Worker threads (speed only, never results)
    #[arg(long)]
    threads: Option<usize>,
}

fn execute(cli: &Cli) -> Result<run::Failures> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("setting up the thread pool")?;
    }
    let loaded = config::load(&cli.config)?;
    loaded.config.check(cli.command)?;
    let prefix = cli
        .out
        .clone()
        .or_else(|| loaded.config.output.clone())
        .context("no output prefix: pass --out or set `output`")?;
    let mut art = Artifacts::new(prefix, cli.command.name(), &loaded.digest);
    let failures = match cli.command {
        Command::Solve => run::solve(&loaded, &mut art),
        Command::Simulate => run::simulate(&loaded, &mut art),
        Command::Compare => run::compare(&loaded, &mut art),
        Command::Diffusion => run::diffusion(&loaded, &mut art),
        Command::Aggregate => run::aggregate(&loaded, &mut art),
    }?;
    for p in &art.written {
        println!("wrote {}", p.display());
    }
    Ok(failures)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(f) if f.is_empty() => ExitCode::SUCCESS,
        Ok(f) => {
            for msg in &f {
                eprintln!("FAIL {msg}");
            }
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
