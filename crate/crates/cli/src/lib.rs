//! Library side of the `gqsfall` command: configuration, commands and
//! output files.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;

use crate::config::RunConfig;
use crate::output::{write_manifest, Manifest, Output, Versions};

/// Command-line overrides, applied after the file and the environment.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub command: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

/// Resolves the configuration from defaults, an optional file, the
/// environment and the overrides, in increasing precedence.
pub fn resolve<I>(file: Option<&std::path::Path>, env: I, over: &Overrides) -> Result<RunConfig>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut cfg = match file {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_env(env)?;
    if let Some(c) = &over.command {
        cfg.set("run.command", c, 0)?;
    }
    if let Some(s) = over.seed {
        cfg.set("run.seed", &s.to_string(), 0)?;
    }
    if let Some(o) = &over.out {
        cfg.set("run.out", &o.to_string_lossy(), 0)?;
    }
    if let Some(w) = over.workers {
        cfg.set("run.workers", &w.to_string(), 0)?;
    }
    Ok(cfg)
}

/// Runs the configured command and writes `manifest.json` whatever the
/// outcome. The returned error, if any, is the command's.
pub fn execute(cfg: &RunConfig) -> Result<commands::Status> {
    let start = Instant::now();
    let dir = cfg.out_dir();
    let hash = cfg.hash();
    let mut out = Output::new(&dir, &hash, cfg.seed())?;
    out.text("config.txt", &cfg.canonical())?;
    let result = commands::run(cfg, &mut out);
    let (status, error) = match &result {
        Ok(s) => (s.as_str().to_string(), None),
        Err(e) => ("failed".to_string(), Some(format!("{e:#}"))),
    };
    write_manifest(
        &dir,
        &Manifest {
            command: cfg.command().to_string(),
            status,
            error,
            config_hash: hash,
            seed: cfg.seed(),
            versions: Versions::current(),
            wall_time_s: start.elapsed().as_secs_f64(),
            files: out.files().to_vec(),
        },
    )?;
    result
}
