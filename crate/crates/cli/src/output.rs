//! Files written by a run: CSV grids, JSON summaries and the manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::fmt_real;

/// Output directory of one command, recording every file it writes.
pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
    hash: String,
    seed: u64,
}

impl Output {
    pub fn new(dir: &Path, hash: &str, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            hash: hash.to_string(),
            seed,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    /// CSV with `# key = value` metadata lines, a header naming columns
    /// with their units, and one row per record at 17 significant digits.
    pub fn csv<I>(
        &mut self,
        name: &str,
        meta: &[(&str, String)],
        header: &[&str],
        rows: I,
    ) -> Result<()>
    where
        I: IntoIterator<Item = Vec<f64>>,
    {
        let path = self.dir.join(name);
        let mut file = BufWriter::new(
            File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        );
        writeln!(file, "# config_hash = {}", self.hash)?;
        writeln!(file, "# seed = {}", self.seed)?;
        for (k, v) in meta {
            writeln!(file, "# {k} = {v}")?;
        }
        let mut w = csv::Writer::from_writer(file);
        w.write_record(header)?;
        for row in rows {
            anyhow::ensure!(
                row.len() == header.len(),
                "{name}: row width {} != {}",
                row.len(),
                header.len()
            );
            w.write_record(row.iter().map(|v| fmt_real(*v)))?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Pretty JSON wrapped with the config hash and seed.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            config_hash: &'a str,
            seed: u64,
            #[serde(flatten)]
            value: &'a T,
        }
        let path = self.dir.join(name);
        let text = serde_json::to_string_pretty(&Wrapped {
            config_hash: &self.hash,
            seed: self.seed,
            value,
        })?;
        std::fs::write(&path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(())
    }
}

/// Reads the numeric columns of a CSV written by [`Output::csv`].
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{}: row {}", path.display(), i + 1))?;
        rows.push(row);
    }
    Ok((header, rows))
}

#[derive(Serialize)]
pub struct Manifest {
    pub command: String,
    /// `complete`, `incomplete` or `failed`.
    pub status: String,
    pub error: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub wall_time_s: f64,
    pub files: Vec<String>,
}

#[derive(Serialize)]
pub struct Versions {
    pub gqsfall: &'static str,
    pub gqs_freefall: &'static str,
}

impl Versions {
    pub fn current() -> Self {
        Self {
            gqsfall: env!("CARGO_PKG_VERSION"),
            gqs_freefall: gqs_freefall::VERSION,
        }
    }
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}
