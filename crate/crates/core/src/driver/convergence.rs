//! Grid refinement study against a fine reference solution.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use super::{run, RunConfig};
use crate::assembly::State;
use crate::error::{PnpError, Result};
use crate::mesh::Grid1D;
use crate::model::PnpModel;
use crate::optimizer::PgParams;

/// How the time step follows the mesh size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// `tau = h`
    Linear,
    /// `tau = h^2`
    Quadratic,
}

impl Coupling {
    pub fn tau(self, h: f64) -> f64 {
        match self {
            Coupling::Linear => h,
            Coupling::Quadratic => h * h,
        }
    }
}

impl FromStr for Coupling {
    type Err = PnpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "tau=h" => Ok(Coupling::Linear),
            "tau=h2" | "tau=h^2" => Ok(Coupling::Quadratic),
            other => Err(PnpError::Config(format!(
                "unknown coupling '{other}', expected tau=h or tau=h2"
            ))),
        }
    }
}

impl fmt::Display for Coupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Coupling::Linear => "tau=h",
            Coupling::Quadratic => "tau=h2",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub tau: f64,
    /// `rho_1`, ..., `rho_s` or `phi`.
    pub field: String,
    /// Discrete L2 error against the restricted reference.
    pub error: f64,
    /// `log(e_coarser / e) / log(h_coarser / h)`; NaN on the coarsest level
    /// and when an error is at rounding level.
    pub order: f64,
    /// Set when the order was suppressed because an error vanished.
    pub degenerate: bool,
}

/// Per-run facts of a study: the reference is the last entry.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRun {
    pub n: usize,
    pub tau: f64,
    pub steps: usize,
    /// Largest `||A u - b||` over every accepted inner iterate.
    pub max_residual: f64,
    /// Largest ratio of that residual to the step's tolerance `1e-8 (1 + ||b||)`.
    pub feasibility_ratio: f64,
    pub mass_drift: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub runs: Vec<StudyRun>,
}

impl ConvergenceReport {
    /// Orders of one field, coarse to fine, skipping the coarsest level.
    pub fn orders(&self, field: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.field == field)
            .skip(1)
            .map(|r| r.order)
            .collect()
    }
}

/// Piecewise-linear interpolation of `(xs, ys)` at `at`; linear
/// extrapolation from the end intervals.
pub fn restrict_linear(xs: &[f64], ys: &[f64], at: &[f64]) -> Result<Vec<f64>> {
    if xs.len() != ys.len() {
        return Err(PnpError::LengthMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(PnpError::Config("interpolation needs at least two nodes".into()));
    }
    Ok(at
        .iter()
        .map(|&x| {
            let k = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1);
            let (x0, x1) = (xs[k - 1], xs[k]);
            let t = (x - x0) / (x1 - x0);
            ys[k - 1] + t * (ys[k] - ys[k - 1])
        })
        .collect())
}

fn l2_error(h: f64, a: &[f64], b: &[f64]) -> f64 {
    (h * a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>()).sqrt()
}

/// Fields compared in the study: every density and the interior potential.
fn fields(u: &State) -> Vec<(String, Vec<f64>)> {
    let layout = u.layout();
    let mut out: Vec<(String, Vec<f64>)> = (0..layout.species)
        .map(|i| (format!("rho_{}", i + 1), u.rho(i).to_vec()))
        .collect();
    out.push(("phi".to_string(), u.phi()[1..=layout.cells].to_vec()));
    out
}

/// Run every level `N` in `levels` with `tau = coupling(h)` up to `t_eval`,
/// plus the reference `(n_ref, tau_ref)`, in parallel, and tabulate L2
/// errors and observed orders.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    model: &PnpModel,
    domain: (f64, f64),
    levels: &[usize],
    coupling: Coupling,
    t_eval: f64,
    reference: (usize, f64),
    pg: &PgParams,
) -> Result<ConvergenceReport> {
    let (n_ref, tau_ref) = reference;
    if levels.len() < 2 {
        return Err(PnpError::Config(format!(
            "observed orders need at least two refinement levels, got {}",
            levels.len()
        )));
    }
    if let Some(&bad) = levels.iter().find(|&&n| n == 0 || n_ref % n != 0) {
        return Err(PnpError::Alignment(format!(
            "reference resolution {n_ref} is not a multiple of level {bad}"
        )));
    }
    let mut jobs: Vec<(usize, f64)> = levels
        .iter()
        .map(|&n| {
            let h = (domain.1 - domain.0) / n as f64;
            (n, coupling.tau(h))
        })
        .collect();
    jobs.push((n_ref, tau_ref));
    for &(n, tau) in &jobs {
        let q = t_eval / tau;
        if (q - q.round()).abs() > 1e-9 * q.max(1.0) {
            return Err(PnpError::Alignment(format!(
                "tau = {tau} (N = {n}) does not divide the evaluation time {t_eval}"
            )));
        }
    }

    let results: Vec<Result<(Grid1D, State, StudyRun)>> = jobs
        .par_iter()
        .map(|&(n, tau)| {
            let started = Instant::now();
            let grid = Grid1D::new(domain.0, domain.1, n)?;
            let mut cfg = RunConfig::new(tau, t_eval);
            cfg.pg = *pg;
            let out = run(model, &grid, &cfg).map_err(|e| e.error)?;
            let d = &out.diagnostics;
            let summary = StudyRun {
                n,
                tau,
                steps: d.records.len() - 1,
                max_residual: d.records.iter().map(|r| r.max_residual).fold(0.0, f64::max),
                feasibility_ratio: d
                    .records
                    .iter()
                    .map(|r| r.max_residual / r.feasibility_tol)
                    .fold(0.0, f64::max),
                mass_drift: d.mass_drift().into_iter().fold(0.0, f64::max),
                seconds: started.elapsed().as_secs_f64(),
            };
            log::info!(
                "N = {n}, tau = {tau:e}: {} steps in {:.1} s",
                summary.steps,
                summary.seconds
            );
            Ok((grid, out.final_state, summary))
        })
        .collect();
    let mut states = Vec::with_capacity(results.len());
    let mut runs = Vec::with_capacity(results.len());
    for r in results {
        let (grid, state, summary) = r?;
        states.push((grid, state));
        runs.push(summary);
    }
    let (ref_grid, ref_state) = states.pop().expect("reference job");
    let ref_fields = fields(&ref_state);

    let mut rows: Vec<ConvergenceRow> = Vec::new();
    let mut prev: Option<(f64, Vec<f64>)> = None;
    for ((grid, state), &(n, tau)) in states.iter().zip(&jobs) {
        let h = grid.h();
        let mut errors = Vec::new();
        for ((name, values), (_, reference)) in fields(state).into_iter().zip(&ref_fields) {
            let restricted = restrict_linear(ref_grid.centers(), reference, grid.centers())?;
            let error = l2_error(h, &values, &restricted);
            errors.push((name, error));
        }
        for (k, (name, error)) in errors.iter().enumerate() {
            let (order, degenerate) = match &prev {
                Some((h_prev, e_prev)) => {
                    let e0 = e_prev[k];
                    if e0 <= 1e-14 || *error <= 1e-14 {
                        (f64::NAN, true)
                    } else {
                        ((e0 / error).ln() / (h_prev / h).ln(), false)
                    }
                }
                None => (f64::NAN, false),
            };
            if degenerate {
                log::warn!("order for {name} at N = {n} suppressed: error at rounding level");
            }
            rows.push(ConvergenceRow {
                n,
                h,
                tau,
                field: name.clone(),
                error: *error,
                order,
                degenerate,
            });
        }
        prev = Some((h, errors.into_iter().map(|(_, e)| e).collect()));
    }
    Ok(ConvergenceReport { rows, runs })
}
