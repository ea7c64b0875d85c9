//! Result files: a CSV of per-channel precisions plus a JSON summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sensprec::precision::PrecisionSolution;
use sensprec::sdpsolve::{SolveStatus, SolverSettings};

use crate::CliError;

pub const CSV_HEADER: &str = "channel,step,precision,precision_scaled,weight_final";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Onestep,
    Steadystate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub tol_feas: f64,
    pub tol_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub status: String,
    pub mode: Mode,
    pub gamma_d: f64,
    pub xi: f64,
    pub cert_trace: f64,
    pub verified_trace: f64,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monotone: Option<bool>,
    pub solver: SolverInfo,
}

pub fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::Unbounded => "unbounded",
        SolveStatus::MaxIter => "max_iter",
        SolveStatus::NumericalFailure => "numerical_failure",
    }
}

impl Summary {
    pub fn new(sol: &PrecisionSolution, mode: Mode, solver: &SolverSettings) -> Self {
        Summary {
            status: status_name(sol.status).to_string(),
            mode,
            gamma_d: sol.gamma_d,
            xi: sol.xi,
            cert_trace: sol.cert_trace,
            verified_trace: sol.verified_trace,
            iterations: sol.iterations,
            start: None,
            delta: None,
            prune: None,
            monotone: sol.monotone,
            solver: SolverInfo {
                tol_feas: solver.tol_feas,
                tol_gap: solver.tol_gap,
            },
        }
    }
}

/// `(prefix.csv, prefix.json)` for a path given with or without either extension.
pub fn paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let base = match prefix.extension().and_then(|e| e.to_str()) {
        Some("csv") | Some("json") => prefix.with_extension(""),
        _ => prefix.to_path_buf(),
    };
    let mut csv = base.clone().into_os_string();
    csv.push(".csv");
    let mut json = base.into_os_string();
    json.push(".json");
    (csv.into(), json.into())
}

/// CSV rows for a solution. `labels` holds the 1-based step and the channel name of each row.
pub fn render_csv(sol: &PrecisionSolution, labels: &[(usize, String)]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let scaled = sol.scaled_precision();
    for (i, (step, name)) in labels.iter().enumerate() {
        writeln!(
            out,
            "{name},{step},{:.8e},{:.8e},{:.8e}",
            sol.s[i], scaled[i], sol.weights[i]
        )
        .expect("writing to a String cannot fail");
    }
    out
}

pub fn write(prefix: &Path, csv: &str, summary: &Summary) -> Result<(), CliError> {
    let (csv_path, json_path) = paths(prefix);
    fs::write(&csv_path, csv).map_err(|e| CliError::Io(format!("{}: {e}", csv_path.display())))?;
    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    fs::write(&json_path, json + "\n").map_err(|e| CliError::Io(format!("{}: {e}", json_path.display())))?;
    Ok(())
}

/// Reads a result back: the summary and the `precision_scaled` column.
pub fn read(prefix: &Path) -> Result<(Summary, Vec<f64>), CliError> {
    let (csv_path, json_path) = paths(prefix);
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())));
    let json = read(&json_path)?;
    let summary: Summary = serde_json::from_str(&json)
        .map_err(|e| CliError::Config(format!("{}: invalid result summary: {e}", json_path.display())))?;
    let csv = read(&csv_path)?;
    let mut lines = csv.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => return Err(CliError::Config(format!("{}: missing CSV header", csv_path.display()))),
    }
    let mut scaled = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(CliError::Config(format!("{}: row {} has {} fields", csv_path.display(), n + 1, fields.len())));
        }
        let v: f64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{}: row {}: bad precision_scaled", csv_path.display(), n + 1)))?;
        if !(v >= 0.0) || !v.is_finite() {
            return Err(CliError::Config(format!("{}: row {}: precision must be finite and non-negative", csv_path.display(), n + 1)));
        }
        scaled.push(v);
    }
    if scaled.is_empty() {
        return Err(CliError::Config(format!("{}: no precision rows", csv_path.display())));
    }
    Ok((summary, scaled))
}
