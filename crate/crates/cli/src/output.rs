use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::manifest::RunManifest;
use crate::CliError;

/// Writes the manifest, optional extra comment lines, then CSV records.
pub fn write_csv(
    path: &Path,
    manifest: &RunManifest,
    notes: &[String],
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<(), CliError> {
    let mut buf = manifest.header().into_bytes();
    for n in notes {
        buf.extend_from_slice(format!("# {n}\n").as_bytes());
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header).map_err(|e| CliError::io(path, e.to_string()))?;
        for r in rows {
            w.write_record(r).map_err(|e| CliError::io(path, e.to_string()))?;
        }
        w.flush().map_err(|e| CliError::io(path, e.to_string()))?;
    }
    write_file(path, &buf)
}

/// Two-column `x y` data; several named series are separated by blank lines.
pub fn write_series(path: &Path, manifest: &RunManifest, series: &[(&str, Vec<(f64, f64)>)]) -> Result<(), CliError> {
    let mut s = manifest.header();
    for (i, (name, points)) in series.iter().enumerate() {
        if i > 0 {
            s.push('\n');
        }
        s.push_str(&format!("# series: {name}\n"));
        for (x, y) in points {
            s.push_str(&format!("{x} {y}\n"));
        }
    }
    write_file(path, s.as_bytes())
}

pub fn write_text(path: &Path, manifest: &RunManifest, body: &str) -> Result<(), CliError> {
    let mut s = manifest.header();
    s.push_str(body);
    write_file(path, s.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e.to_string()))?;
    f.write_all(bytes).map_err(|e| CliError::io(path, e.to_string()))
}

pub fn prepare_dir(dir: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e.to_string()))?;
    Ok(dir.to_path_buf())
}

pub fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}
