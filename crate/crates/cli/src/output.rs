use std::fs;
use std::path::Path;

use latmap::dataset::format::{DATASET_FORMAT, DATASET_VERSION};
use latmap::nn::{MODEL_FORMAT, MODEL_VERSION};
use serde::Serialize;
use serde_json::{json, Value};

use crate::CliError;

pub const SNAPSHOT_FILE: &str = "resolved_config.json";

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime("io", format!("{}: {e}", dir.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime("json", e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::runtime("io", format!("{}: {e}", path.display())))
}

/// Resolved configuration plus the on-disk format versions.
pub fn write_snapshot(dir: &Path, command: &str, config: &Value) -> Result<(), CliError> {
    ensure_dir(dir)?;
    let snapshot = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "formats": {
            "dataset": { "format": DATASET_FORMAT, "version": DATASET_VERSION },
            "model": { "format": MODEL_FORMAT, "version": MODEL_VERSION },
        },
        "config": config,
    });
    write_json(&dir.join(SNAPSHOT_FILE), &snapshot)
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::runtime("io", format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::runtime("io", e.to_string()))
}

/// A site-ordered map as nested arrays: flat for a chain, rows for a square.
pub fn nest(extents: &[usize], values: &[f64]) -> Value {
    if extents.len() < 2 {
        return json!(values);
    }
    let width = extents[extents.len() - 1];
    Value::Array(values.chunks(width).map(|r| json!(r)).collect())
}

pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
