//! CSV writers for diagnostics, snapshots and convergence tables.
//!
//! Floats are written with 17 significant digits so that values round-trip
//! exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::driver::{ConvergenceRow, Snapshot, StepRecord};
use crate::error::{PnpError, Result};
use crate::mesh::Grid1D;

/// Full-precision float formatting.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// Time label used in snapshot file names: shortest decimal, at most ten
/// fractional digits.
pub fn time_label(t: f64) -> String {
    let s = format!("{t:.10}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

pub fn diagnostics_header(species: usize) -> String {
    let mut cols = vec!["t".to_string(), "energy".to_string(), "kinetic".to_string()];
    cols.extend((1..=species).map(|i| format!("mass_{i}")));
    cols.extend(["min_rho", "pg_iters", "pg_status"].map(String::from));
    cols.join(",")
}

fn diagnostics_row(r: &StepRecord) -> String {
    let mut cols = vec![fmt_f64(r.t), fmt_f64(r.energy), fmt_f64(r.kinetic)];
    cols.extend(r.masses.iter().map(|&m| fmt_f64(m)));
    cols.push(fmt_f64(r.min_rho));
    cols.push(r.pg_iters.to_string());
    cols.push(r.status_label());
    cols.join(",")
}

/// Appends diagnostics rows as they arrive, flushing each one so that an
/// aborted run leaves every completed step on disk.
pub struct DiagnosticsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl DiagnosticsWriter {
    pub fn create(path: impl AsRef<Path>, species: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| PnpError::io(&path, e))?;
        let mut w = DiagnosticsWriter {
            path,
            out: BufWriter::new(file),
        };
        let header = diagnostics_header(species);
        w.line(&header)?;
        Ok(w)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}")
            .and_then(|_| self.out.flush())
            .map_err(|e| PnpError::io(&self.path, e))
    }

    pub fn write(&mut self, r: &StepRecord) -> Result<()> {
        let row = diagnostics_row(r);
        self.line(&row)
    }
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let file = File::create(path).map_err(|e| PnpError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for l in lines {
        writeln!(out, "{l}").map_err(|e| PnpError::io(path, e))?;
    }
    out.flush().map_err(|e| PnpError::io(path, e))
}

pub fn write_diagnostics(path: impl AsRef<Path>, records: &[StepRecord]) -> Result<()> {
    let species = records.first().map_or(0, |r| r.masses.len());
    let lines = std::iter::once(diagnostics_header(species)).chain(records.iter().map(diagnostics_row));
    write_lines(path.as_ref(), lines)
}

fn xy_lines(xs: &[f64], ys: &[f64]) -> Vec<String> {
    std::iter::once("x,value".to_string())
        .chain(
            xs.iter()
                .zip(ys)
                .map(|(x, y)| format!("{},{}", fmt_f64(*x), fmt_f64(*y))),
        )
        .collect()
}

/// Write `rho_<i>_t<t>.csv` for every species and `phi_t<t>.csv` (ghost
/// values included, at `a - h/2` and `b + h/2`). Returns the paths written.
pub fn write_snapshot(dir: impl AsRef<Path>, grid: &Grid1D, snap: &Snapshot) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let label = time_label(snap.t);
    let mut written = Vec::new();
    for (i, rho) in snap.rho.iter().enumerate() {
        let path = dir.join(format!("rho_{}_t{label}.csv", i + 1));
        write_lines(&path, xy_lines(grid.centers(), rho))?;
        written.push(path);
    }
    let h = grid.h();
    let xs: Vec<f64> = (0..grid.n() + 2).map(|j| grid.a() + (j as f64 - 0.5) * h).collect();
    let path = dir.join(format!("phi_t{label}.csv"));
    write_lines(&path, xy_lines(&xs, &snap.phi))?;
    written.push(path);
    Ok(written)
}

pub const CONVERGENCE_HEADER: &str = "h,tau,field,error,order";

pub fn write_convergence(path: impl AsRef<Path>, rows: &[ConvergenceRow]) -> Result<()> {
    let lines = std::iter::once(CONVERGENCE_HEADER.to_string()).chain(rows.iter().map(|r| {
        format!(
            "{},{},{},{},{}",
            fmt_f64(r.h),
            fmt_f64(r.tau),
            r.field,
            fmt_f64(r.error),
            fmt_f64(r.order)
        )
    }));
    write_lines(path.as_ref(), lines)
}
