use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub(crate) const HASH_PREFIX: &str = "# config_hash: ";

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes CSV text preceded by a `# config_hash: …` comment line.
pub(crate) fn write_with_hash(path: &Path, hash: &str, csv: &str) -> Result<()> {
    write_bytes(path, format!("{HASH_PREFIX}{hash}\n{csv}").as_bytes())
}

/// Splits a file written by [`write_with_hash`] into its hash and CSV body.
pub fn read_hashed_csv(path: &Path) -> Result<(String, String)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let corrupt = || Error::Corrupt {
        path: path.to_owned(),
        reason: "missing config hash line".into(),
    };
    let (first, rest) = text.split_once('\n').ok_or_else(corrupt)?;
    let hash = first.strip_prefix(HASH_PREFIX).ok_or_else(corrupt)?;
    Ok((hash.to_string(), rest.to_string()))
}

/// Parses an all-numeric CSV body (the header line is skipped).
pub(crate) fn parse_numeric_csv(path: &Path, body: &str) -> Result<Vec<Vec<f64>>> {
    body.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|line| {
            line.split(',')
                .map(|cell| {
                    cell.parse::<f64>().map_err(|e| Error::Corrupt {
                        path: path.to_owned(),
                        reason: format!("`{cell}`: {e}"),
                    })
                })
                .collect()
        })
        .collect()
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
