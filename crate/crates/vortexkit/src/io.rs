//! Deterministic text artifacts: field dumps, trajectory and report CSVs,
//! filament curve dumps, and the JSON run manifest. Every float is written
//! with 17 significant digits so equal runs produce byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::filament::FilamentCurve;
use crate::grid2d::ComplexField2D;
use crate::{Error, Result};

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path, err: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        reason: err.to_string(),
    }
}

pub fn write_text(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
    }
    fs::write(path, content).map_err(|e| io_err(path, e))
}

/// Interior-node dump: a comment header, then row-major "x y re im" lines.
pub fn field_dump(field: &ComplexField2D, kind: &str) -> String {
    let grid = field.grid;
    let mut out = format!("# level {} kind {}\n", grid.level(), kind);
    let m = grid.m();
    for j in 0..m {
        for i in 0..m {
            let (x, y) = grid.coord(i, j);
            let v = field.values[grid.idx(i, j)];
            let _ = writeln!(
                out,
                "{} {} {} {}",
                fmt_f64(x),
                fmt_f64(y),
                fmt_f64(v.re),
                fmt_f64(v.im)
            );
        }
    }
    out
}

/// Comma-separated variant of the field dump with a column header.
pub fn field_csv(field: &ComplexField2D, kind: &str) -> String {
    let grid = field.grid;
    let mut out = format!("# level {} kind {}\nx,y,re,im\n", grid.level(), kind);
    let m = grid.m();
    for j in 0..m {
        for i in 0..m {
            let (x, y) = grid.coord(i, j);
            let v = field.values[grid.idx(i, j)];
            let _ = writeln!(
                out,
                "{},{},{},{}",
                fmt_f64(x),
                fmt_f64(y),
                fmt_f64(v.re),
                fmt_f64(v.im)
            );
        }
    }
    out
}

/// Columns t, a1x, a1y, ..., aMx, aMy; one row per sample.
pub fn trajectory_csv(times: &[f64], positions: &[Vec<(f64, f64)>]) -> Result<String> {
    if times.len() != positions.len() {
        return Err(Error::Dimension {
            expected: times.len(),
            got: positions.len(),
        });
    }
    let m = positions.first().map_or(0, Vec::len);
    let mut out = String::from("t");
    for j in 1..=m {
        let _ = write!(out, ",a{j}x,a{j}y");
    }
    out.push('\n');
    for (t, row) in times.iter().zip(positions) {
        if row.len() != m {
            return Err(Error::Dimension {
                expected: m,
                got: row.len(),
            });
        }
        let _ = write!(out, "{}", fmt_f64(*t));
        for &(x, y) in row {
            let _ = write!(out, ",{},{}", fmt_f64(x), fmt_f64(y));
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SpectralRow {
    pub level: u32,
    pub operator: String,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub cond: f64,
}

pub fn spectral_csv(rows: &[SpectralRow]) -> String {
    let mut out = String::from("level,operator,lambda_min,lambda_max,cond\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.level,
            r.operator,
            fmt_f64(r.lambda_min),
            fmt_f64(r.lambda_max),
            fmt_f64(r.cond)
        );
    }
    out
}

/// Warped-register window diagnostics: sample position, row norm, relative
/// deviation from the readout row.
pub fn window_csv(rows: &[(f64, f64, f64)]) -> String {
    let mut out = String::from("p,row_norm,deviation\n");
    for &(p, norm, dev) in rows {
        let _ = writeln!(out, "{},{},{}", fmt_f64(p), fmt_f64(norm), fmt_f64(dev));
    }
    out
}

/// Filament node coordinates, one block of rows per snapshot time.
pub fn curve_csv(snapshots: &[(f64, FilamentCurve)]) -> String {
    let mut out = String::from("t,node,x,y,z\n");
    for (t, curve) in snapshots {
        for (s, p) in curve.nodes.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                fmt_f64(*t),
                s,
                fmt_f64(p[0]),
                fmt_f64(p[1]),
                fmt_f64(p[2])
            );
        }
    }
    out
}

/// One float per line; blank lines and '#' comments skipped. Used for
/// externally supplied boundary-phase tables.
pub fn read_value_table(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        // Tolerate a single-column CSV with trailing commas.
        let token = line.trim_end_matches(',');
        let v: f64 = token.parse().map_err(|_| {
            Error::Config(format!(
                "{}:{}: not a number: {token:?}",
                path.display(),
                lineno + 1
            ))
        })?;
        values.push(v);
    }
    Ok(values)
}

/// Reproducibility record written next to every experiment's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: String,
    pub version: String,
    /// Flattened key = value view of the effective configuration; a sorted
    /// map keeps the serialization deterministic.
    pub config: BTreeMap<String, String>,
    pub wall_seconds: f64,
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    write_text(path, &(text + "\n"))
}
