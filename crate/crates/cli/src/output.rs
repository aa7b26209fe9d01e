//! Result files: report JSON, replica CSV and the resolved-config echo.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::ValueEnum;
use coagfrag_core::ExperimentReport;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

pub struct Sink {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

/// `{experiment}-{theta}-{tag}-{seed}`, skipping absent pieces.
pub fn stem(experiment: &str, theta: Option<f64>, tag: &str, seed: Option<u64>) -> String {
    let mut s = experiment.to_string();
    if let Some(theta) = theta {
        s += &format!("-{theta}");
    }
    s += &format!("-{tag}");
    if let Some(seed) = seed {
        s += &format!("-{seed}");
    }
    s
}

impl Sink {
    fn path(&self, stem: &str, extension: &str) -> PathBuf {
        self.dir.join(format!("{stem}.{extension}"))
    }

    fn ensure_dir(&self) -> anyhow::Result<()> {
        fs::create_dir_all(&self.dir).with_context(|| format!("cannot create {}", self.dir.display()))
    }

    /// Writes the report and its replica rows; returns the paths written.
    pub fn report(&self, report: &ExperimentReport, theta: Option<f64>, tag: &str) -> anyhow::Result<Vec<PathBuf>> {
        self.ensure_dir()?;
        let stem = stem(&report.name, theta, tag, Some(report.seed));
        let mut written = Vec::new();
        if self.formats.contains(&Format::Json) {
            let path = self.path(&stem, "json");
            write(&path, report.to_json() + "\n")?;
            written.push(path);
        }
        if self.formats.contains(&Format::Csv) && !report.rows.is_empty() {
            let path = self.path(&stem, "csv");
            write_csv(&path, &report.rows)?;
            written.push(path);
        }
        Ok(written)
    }

    /// Writes plot-ready rows under the given stem.
    pub fn rows<T: Serialize>(&self, stem: &str, rows: &[T]) -> anyhow::Result<Option<PathBuf>> {
        if !self.formats.contains(&Format::Csv) {
            return Ok(None);
        }
        self.ensure_dir()?;
        let path = self.path(stem, "csv");
        write_csv(&path, rows)?;
        Ok(Some(path))
    }

    /// Writes arbitrary JSON under the given stem.
    pub fn json<T: Serialize>(&self, stem: &str, value: &T) -> anyhow::Result<Option<PathBuf>> {
        if !self.formats.contains(&Format::Json) {
            return Ok(None);
        }
        self.ensure_dir()?;
        let path = self.path(stem, "json");
        write(&path, serde_json::to_string_pretty(value)? + "\n")?;
        Ok(Some(path))
    }

    /// The fully resolved configuration, loadable again with `--config`.
    pub fn echo<T: Serialize>(&self, stem: &str, config: &T) -> anyhow::Result<PathBuf> {
        self.ensure_dir()?;
        let path = self.path(stem, "config.json");
        write(&path, serde_json::to_string_pretty(config)? + "\n")?;
        Ok(path)
    }
}

fn write(path: &Path, contents: String) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
