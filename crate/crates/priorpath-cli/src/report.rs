//! Output plumbing: atomic file writes and the CSV/JSON emitters shared by
//! the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use priorpath::{Error, Result};

/// Writes through a temp file in the same directory and renames over the
/// destination, so readers never observe a half-written file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = PathBuf::from(path);
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidSpec(format!("{} has no file name", path.display())))?;
    tmp.set_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::InvalidSpec(format!("cannot serialize summary: {e}")))?;
    text.push(b'\n');
    atomic_write(path, &text)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header).map_err(Error::from)?;
    for row in rows {
        writer.write_record(row).map_err(Error::from)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::InvalidSpec(format!("csv buffer: {e}")))?;
    atomic_write(path, &bytes)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Shortest representation that parses back to the same f64. Infinities
/// print as `inf`/`-inf`, which Rust and most CSV readers accept.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// An empty cell for estimates a failed grid point never produced.
pub fn blank() -> String {
    String::new()
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}
