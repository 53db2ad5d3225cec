use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;

use gqsfall_cli::{execute, resolve, Overrides};

/// Quantum free fall of antihydrogen: simulation and estimation of g.
#[derive(Parser, Debug)]
#[command(name = "gqsfall", version)]
struct Args {
    /// Configuration file of `section.key = value unit` lines.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Command to run (scales, basis, source-dist, end-of-mirror,
    /// current-map, simulate, estimate, fisher, campaign).
    #[arg(long)]
    command: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(short, long)]
    workers: Option<usize>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let over = Overrides {
        command: args.command,
        seed: args.seed,
        out: args.out,
        workers: args.workers,
    };
    let cfg = resolve(args.config.as_deref(), std::env::vars(), &over)?;
    if args.print_config {
        print!("{}", cfg.canonical());
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers())
        .build_global()
        .context("starting the worker pool")?;
    let status = execute(&cfg)?;
    log::info!(
        "{} {}: {}",
        cfg.command(),
        status.as_str(),
        cfg.out_dir().display()
    );
    Ok(())
}
