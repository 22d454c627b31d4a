//! CSV and manifest writers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::BenchError;

/// Environment variable consulted when no `--out` flag is given.
pub const OUT_DIR_ENV: &str = "LRSENSE_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "results";

/// Output directory: flag, then environment, then config, then `results`.
pub fn resolve_out_dir(flag: Option<&Path>, env: Option<&str>, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(e) = env.filter(|e| !e.is_empty()) {
        return PathBuf::from(e);
    }
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Writes `<dir>/<name>.csv` and `<dir>/<name>.manifest.txt`; returns the CSV path.
pub fn write_figure<R: Serialize>(
    dir: &Path,
    name: &str,
    rows: &[R],
    cfg: &ExperimentConfig,
) -> Result<PathBuf, BenchError> {
    fs::create_dir_all(dir).map_err(|source| BenchError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let csv_path = dir.join(format!("{name}.csv"));
    let csv_err = |source| BenchError::Csv {
        path: csv_path.clone(),
        source,
    };
    let mut writer = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
    for row in rows {
        writer.serialize(row).map_err(csv_err)?;
    }
    writer.flush().map_err(|source| BenchError::Io {
        path: csv_path.clone(),
        source,
    })?;
    let manifest_path = dir.join(format!("{name}.manifest.txt"));
    let manifest = format!("figure = {name}\n{}", cfg.manifest());
    fs::write(&manifest_path, manifest).map_err(|source| BenchError::Io {
        path: manifest_path,
        source,
    })?;
    Ok(csv_path)
}
