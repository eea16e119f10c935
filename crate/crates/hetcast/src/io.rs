//! File access and delimited matrix text.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use hetcast_core::dataset::{parse_series, SeriesMatrix};
use hetcast_core::numerics::Tensor;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes a file, creating missing parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads a delimited series file (one timestamp per row).
pub fn load_series(path: &Path, delimiter: char, header: bool) -> Result<(SeriesMatrix, String)> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    let m = parse_series(text, delimiter, header).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((m, sha256_hex(&bytes)))
}

/// One row per matrix row, shortest round-trip decimal values.
pub fn format_matrix(m: &Tensor) -> String {
    let cols = m.last_dim();
    let mut out = String::new();
    for row in m.data().chunks(cols) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(out, "{}", cells.join(",")).unwrap();
    }
    out
}

pub fn parse_matrix(path: &Path, text: &str, n: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(n * n);
    let mut rows = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        rows += 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n {
            return Err(Error::format(path, format!("row {rows} has {} values, expected {n}", cells.len())));
        }
        for c in cells {
            data.push(
                c.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::format(path, format!("row {rows}: bad number {c:?}")))?,
            );
        }
    }
    if rows != n {
        return Err(Error::format(path, format!("{rows} rows, expected {n}")));
    }
    Ok(Tensor::new(&[n, n], data)?)
}
