//! Sample files, atomic writes and the fit report.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{PmleError, Result};
use crate::pipeline::DensityEstimate;

/// Parses a single-column sample: one value per line, optional `value`
/// header, blank lines ignored.
pub fn parse_sample(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (i == 0 && line.eq_ignore_ascii_case("value")) {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| PmleError::Parse {
            line: i + 1,
            message: format!("'{line}' is not a number"),
        })?;
        if !v.is_finite() {
            return Err(PmleError::Parse {
                line: i + 1,
                message: format!("non-finite value {v}"),
            });
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(PmleError::Parse {
            line: 0,
            message: "no values found".into(),
        });
    }
    Ok(out)
}

pub fn read_sample(path: &Path) -> Result<Vec<f64>> {
    parse_sample(&fs::read_to_string(path)?)
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| PmleError::Io(e.error))?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct SubsampleReport {
    pub converged: bool,
    pub violation_max: f64,
}

#[derive(Debug, Serialize)]
pub struct DiagnosticsReport {
    pub lambda: f64,
    pub shrink_history: Vec<[f64; 2]>,
    pub shrink_limit_reached: bool,
    pub raw_integral: f64,
    pub failed_attempts: usize,
    pub per_subsample: Vec<SubsampleReport>,
}

/// The JSON document written by `fit`.
#[derive(Debug, Serialize)]
pub struct FitReport {
    pub support: [f64; 2],
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub diagnostics: DiagnosticsReport,
}

impl From<&DensityEstimate> for FitReport {
    fn from(est: &DensityEstimate) -> Self {
        let d = &est.diagnostics;
        FitReport {
            support: [est.support.0, est.support.1],
            grid: est.grid.clone(),
            density: est.values.clone(),
            diagnostics: DiagnosticsReport {
                lambda: d.lambda,
                shrink_history: d.shrink_history.iter().map(|&(l, u)| [l, u]).collect(),
                shrink_limit_reached: d.shrink_limit_reached,
                raw_integral: d.raw_integral,
                failed_attempts: d.failed_attempts,
                per_subsample: est
                    .per_subsample
                    .iter()
                    .map(|s| SubsampleReport {
                        converged: s.converged,
                        violation_max: s.violation_max,
                    })
                    .collect(),
            },
        }
    }
}

pub fn fit_report_json(est: &DensityEstimate) -> Result<String> {
    Ok(serde_json::to_string_pretty(&FitReport::from(est))?)
}
