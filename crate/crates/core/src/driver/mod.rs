//! Outer time loop: density floor selection, one minimization per step,
//! diagnostics and snapshots.

mod convergence;
mod reference;

pub use convergence::{convergence_study, restrict_linear, ConvergenceReport, ConvergenceRow, Coupling, StudyRun};
pub use reference::{kkt_residual, reference_minimizer, KktResidual, ReferenceReport};

use std::fmt;

use crate::assembly::{build_constraint_system, ConstraintSystem, State};
use crate::error::{PnpError, Result};
use crate::functional::{eval_objective, EnergyBreakdown, Objective, ObjectiveParams};
use crate::mesh::Grid1D;
use crate::model::{neumann_compatibility, sample, validate, PnpModel, SampledModel};
use crate::optimizer::{build_projector, pg_solve, PgParams, PgReport, PgStatus, Projector};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub tau: f64,
    pub t_final: f64,
    pub snapshot_times: Vec<f64>,
    pub pg: PgParams,
    pub delta_override: Option<f64>,
}

impl RunConfig {
    pub fn new(tau: f64, t_final: f64) -> Self {
        RunConfig {
            tau,
            t_final,
            snapshot_times: Vec::new(),
            pg: PgParams::default(),
            delta_override: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(PnpError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(PnpError::Config(format!(
                "final time must be positive, got {}",
                self.t_final
            )));
        }
        if self.tau > self.t_final * (1.0 + 1e-12) {
            return Err(PnpError::Config(format!(
                "tau = {} exceeds the final time {}",
                self.tau, self.t_final
            )));
        }
        if let Some(t) = self
            .snapshot_times
            .iter()
            .find(|&&t| !(t >= 0.0 && t <= self.t_final * (1.0 + 1e-12)))
        {
            return Err(PnpError::Config(format!(
                "snapshot time {t} outside [0, {}]",
                self.t_final
            )));
        }
        if let Some(d) = self.delta_override {
            if !(d > 0.0) {
                return Err(PnpError::Config(format!("delta override must be positive, got {d}")));
            }
        }
        self.pg.validate()
    }

    /// `ceil(T / tau)`, tolerant to rounding in the quotient.
    pub fn step_count(&self) -> usize {
        let q = self.t_final / self.tau;
        let r = q.round();
        if (q - r).abs() <= 1e-9 * q.max(1.0) {
            r as usize
        } else {
            q.ceil() as usize
        }
    }
}

/// Density floor: `max(min(h^2, tau), min rho_in)` when the initial minimum
/// is positive, `min(h^2, tau)` otherwise.
pub fn select_delta(h: f64, tau: f64, rho_in_samples: &[Vec<f64>]) -> f64 {
    let base = (h * h).min(tau);
    let min_in = rho_in_samples.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    if min_in > 0.0 && min_in.is_finite() {
        base.max(min_in)
    } else {
        base
    }
}

/// One row of the per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    /// Discrete free energy `E_h` at this step.
    pub energy: f64,
    /// Transport term at the minimizer (zero for the initial row).
    pub kinetic: f64,
    pub masses: Vec<f64>,
    pub min_rho: f64,
    pub pg_iters: usize,
    /// `None` for the initial row.
    pub pg_status: Option<PgStatus>,
    /// Largest `||A u - b||` over the accepted inner iterates.
    pub max_residual: f64,
    pub feasibility_tol: f64,
    /// Some density fell below the floor `delta` (informational).
    pub below_floor: bool,
}

impl StepRecord {
    pub fn status_label(&self) -> String {
        match self.pg_status {
            Some(s) => s.to_string(),
            None => "initial".to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub delta: f64,
    pub records: Vec<StepRecord>,
}

impl Diagnostics {
    pub fn energies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.energy).collect()
    }

    /// Largest `|mass_n - mass_0|` per species.
    pub fn mass_drift(&self) -> Vec<f64> {
        let Some(first) = self.records.first() else {
            return Vec::new();
        };
        (0..first.masses.len())
            .map(|i| {
                self.records
                    .iter()
                    .map(|r| (r.masses[i] - first.masses[i]).abs())
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    pub fn min_density(&self) -> f64 {
        self.records.iter().map(|r| r.min_rho).fold(f64::INFINITY, f64::min)
    }

    /// Largest violation of `E^{n+1} + K^{n+1} <= E^n` over all steps.
    pub fn worst_dissipation_defect(&self) -> f64 {
        self.records
            .windows(2)
            .map(|w| w[1].energy + w[1].kinetic - w[0].energy)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub rho: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub grid: Grid1D,
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Diagnostics,
    pub final_state: State,
}

/// A run that stopped at a failed step, with everything computed before it.
#[derive(Debug)]
pub struct RunAborted {
    pub error: PnpError,
    pub diagnostics: Diagnostics,
    pub snapshots: Vec<Snapshot>,
}

impl fmt::Display for RunAborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "run aborted after {} recorded steps: {}",
            self.diagnostics.records.len(),
            self.error
        )
    }
}

impl std::error::Error for RunAborted {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

fn masses(u: &State, h: f64) -> Vec<f64> {
    (0..u.layout().species)
        .map(|i| h * u.rho(i).iter().sum::<f64>())
        .collect()
}

/// Everything needed to advance one step, built once per grid and time step.
#[derive(Debug, Clone)]
pub struct Stepper {
    grid: Grid1D,
    sampled: SampledModel,
    system: ConstraintSystem,
    projector: Projector,
    params: ObjectiveParams,
    pg: PgParams,
}

impl Stepper {
    /// `sampled.rho0` is taken as already floored.
    pub fn new(sampled: SampledModel, grid: Grid1D, tau: f64, delta: f64, pg: PgParams) -> Result<Self> {
        pg.validate()?;
        let system = build_constraint_system(&sampled, &grid, &sampled.rho0, delta)?;
        let projector = build_projector(&system)?;
        let params = ObjectiveParams::new(&sampled, &grid, tau)?;
        Ok(Stepper {
            grid,
            sampled,
            system,
            projector,
            params,
            pg,
        })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn sampled(&self) -> &SampledModel {
        &self.sampled
    }

    pub fn system(&self) -> &ConstraintSystem {
        &self.system
    }

    pub fn params(&self) -> &ObjectiveParams {
        &self.params
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    pub fn pg(&self) -> &PgParams {
        &self.pg
    }

    pub fn set_pg(&mut self, pg: PgParams) {
        self.pg = pg;
    }

    /// Feasible state at the anchor densities `rho`.
    pub fn initial_state(&mut self, rho: &[Vec<f64>]) -> Result<State> {
        self.system.set_anchor(rho)?;
        self.system.warm_start()
    }

    pub fn energy_of(&self, u: &State) -> Result<EnergyBreakdown> {
        match eval_objective(u, &self.params) {
            Objective::Finite(e) => Ok(e),
            Objective::Infinite => Err(PnpError::Domain("state lies outside the positive cone".into())),
        }
    }

    /// Minimize from the warm start at `rho_prev`; checks mass, energy and
    /// positivity of the result.
    pub fn advance(&mut self, rho_prev: &[Vec<f64>]) -> Result<(State, PgReport)> {
        self.system.set_anchor(rho_prev)?;
        let start = self.system.warm_start()?;
        let (u, report) = pg_solve(&start, &self.system, &self.projector, &self.params, &self.pg)?;
        let h = self.grid.h();
        for (i, prev) in rho_prev.iter().enumerate() {
            let before = h * prev.iter().sum::<f64>();
            let after = h * u.rho(i).iter().sum::<f64>();
            if (after - before).abs() > 1e-8 * before.abs().max(1.0) {
                return Err(PnpError::Domain(format!(
                    "mass of species {} drifted from {before} to {after}",
                    i + 1
                )));
            }
        }
        if !(u.min_density() > 0.0) {
            return Err(PnpError::Domain(format!(
                "density lost positivity: min {}",
                u.min_density()
            )));
        }
        if !self.pg.enforce_clamp && report.objective_end > report.objective_start + 2.0 * self.pg.tol {
            return Err(PnpError::Domain(format!(
                "objective increased from {} to {}",
                report.objective_start, report.objective_end
            )));
        }
        Ok((u, report))
    }
}

/// Sample, choose the floor and apply it; rechecks pure-Neumann
/// compatibility on the floored data.
pub fn prepare(model: &PnpModel, grid: &Grid1D, cfg: &RunConfig) -> Result<(SampledModel, f64)> {
    validate(model, grid).into_result()?;
    let mut sm = sample(model, grid);
    let delta = cfg
        .delta_override
        .unwrap_or_else(|| select_delta(grid.h(), cfg.tau, &sm.rho0));
    sm.floor_initial(delta);
    if sm.pure_neumann() {
        let (res, tol) = neumann_compatibility(grid.h(), &sm.f_center, &sm.charges, &sm.rho0, &sm.left, &sm.right);
        if res > tol {
            return Err(PnpError::Validation(format!(
                "floored initial data violate the Neumann compatibility condition (residual {res:e})"
            )));
        }
    }
    Ok((sm, delta))
}

/// Advance a single step from `rho_prev`. Builds the constraint system and
/// projector from scratch; [`run`] reuses them across steps.
pub fn advance_step(
    rho_prev: &[Vec<f64>],
    sm: &SampledModel,
    grid: &Grid1D,
    cfg: &RunConfig,
) -> Result<(State, StepRecord)> {
    cfg.validate()?;
    let delta = cfg
        .delta_override
        .unwrap_or_else(|| select_delta(grid.h(), cfg.tau, rho_prev));
    let mut stepper = Stepper::new(sm.clone(), grid.clone(), cfg.tau, delta, cfg.pg)?;
    let (u, report) = stepper.advance(rho_prev).map_err(|e| PnpError::Solver {
        step: 1,
        reason: e.to_string(),
    })?;
    let e = stepper.energy_of(&u)?;
    let record = StepRecord {
        step: 1,
        t: cfg.tau,
        energy: e.diagnostic_energy,
        kinetic: e.kinetic,
        masses: masses(&u, grid.h()),
        min_rho: u.min_density(),
        pg_iters: report.iterations,
        pg_status: Some(report.status),
        max_residual: report.max_residual,
        feasibility_tol: stepper.system().feasibility_tolerance(),
        below_floor: u.min_density() < delta * (1.0 - 1e-12),
    };
    Ok((u, record))
}

/// Run the full time loop. See [`run_with_observer`].
pub fn run(model: &PnpModel, grid: &Grid1D, cfg: &RunConfig) -> std::result::Result<RunOutput, Box<RunAborted>> {
    run_with_observer(model, grid, cfg, |_, _| Ok(()))
}

/// Run the time loop, handing each diagnostics row and its state to
/// `observer` as soon as it is computed. An observer error aborts the run.
pub fn run_with_observer<F>(
    model: &PnpModel,
    grid: &Grid1D,
    cfg: &RunConfig,
    mut observer: F,
) -> std::result::Result<RunOutput, Box<RunAborted>>
where
    F: FnMut(&StepRecord, &State) -> Result<()>,
{
    let mut diagnostics = Diagnostics::default();
    let mut snapshots = Vec::new();
    let abort = |error: PnpError, diagnostics: Diagnostics, snapshots: Vec<Snapshot>| {
        Box::new(RunAborted {
            error,
            diagnostics,
            snapshots,
        })
    };
    if let Err(e) = cfg.validate() {
        return Err(abort(e, diagnostics, snapshots));
    }
    let (sm, delta) = match prepare(model, grid, cfg) {
        Ok(v) => v,
        Err(e) => return Err(abort(e, diagnostics, snapshots)),
    };
    diagnostics.delta = delta;
    let rho0 = sm.rho0.clone();
    let mut stepper = match Stepper::new(sm, grid.clone(), cfg.tau, delta, cfg.pg) {
        Ok(s) => s,
        Err(e) => return Err(abort(e, diagnostics, snapshots)),
    };
    let nsteps = cfg.step_count();
    let snapshot_steps: Vec<usize> = cfg
        .snapshot_times
        .iter()
        .map(|t| ((t / cfg.tau).round() as usize).min(nsteps))
        .collect();
    let h = grid.h();

    let mut u = match stepper.initial_state(&rho0) {
        Ok(u) => u,
        Err(e) => return Err(abort(e, diagnostics, snapshots)),
    };
    let e0 = match stepper.energy_of(&u) {
        Ok(e) => e,
        Err(e) => return Err(abort(e, diagnostics, snapshots)),
    };
    let record = StepRecord {
        step: 0,
        t: 0.0,
        energy: e0.diagnostic_energy,
        kinetic: 0.0,
        masses: masses(&u, h),
        min_rho: u.min_density(),
        pg_iters: 0,
        pg_status: None,
        max_residual: stepper.system().residual_norm(u.as_slice()),
        feasibility_tol: stepper.system().feasibility_tolerance(),
        below_floor: u.min_density() < delta * (1.0 - 1e-12),
    };
    if let Err(e) = observer(&record, &u) {
        return Err(abort(e, diagnostics, snapshots));
    }
    diagnostics.records.push(record);
    if snapshot_steps.contains(&0) {
        snapshots.push(Snapshot {
            step: 0,
            t: 0.0,
            rho: u.densities(),
            phi: u.phi().to_vec(),
        });
    }

    for n in 1..=nsteps {
        let rho_prev = u.densities();
        let (next, report) = match stepper.advance(&rho_prev) {
            Ok(v) => v,
            Err(e) => {
                let err = PnpError::Solver {
                    step: n,
                    reason: e.to_string(),
                };
                return Err(abort(err, diagnostics, snapshots));
            }
        };
        u = next;
        let e = match stepper.energy_of(&u) {
            Ok(e) => e,
            Err(e) => return Err(abort(e, diagnostics, snapshots)),
        };
        let t = n as f64 * cfg.tau;
        let record = StepRecord {
            step: n,
            t,
            energy: e.diagnostic_energy,
            kinetic: e.kinetic,
            masses: masses(&u, h),
            min_rho: u.min_density(),
            pg_iters: report.iterations,
            pg_status: Some(report.status),
            max_residual: report.max_residual,
            feasibility_tol: stepper.system().feasibility_tolerance(),
            below_floor: u.min_density() < delta * (1.0 - 1e-12),
        };
        log::debug!(
            "step {n} t={t:.6} E={:.12} K={:.3e} iters={} status={}",
            record.energy,
            record.kinetic,
            record.pg_iters,
            record.status_label()
        );
        if let Err(e) = observer(&record, &u) {
            return Err(abort(e, diagnostics, snapshots));
        }
        diagnostics.records.push(record);
        if snapshot_steps.contains(&n) {
            snapshots.push(Snapshot {
                step: n,
                t,
                rho: u.densities(),
                phi: u.phi().to_vec(),
            });
        }
    }
    Ok(RunOutput {
        grid: grid.clone(),
        snapshots,
        diagnostics,
        final_state: u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn delta_selection() {
        let smooth = vec![vec![1.02, 1.5], vec![1.3, 2.0]];
        assert_abs_diff_eq!(select_delta(0.05, 0.01, &smooth), 1.02);
        let indicator = vec![vec![0.0, 10.0 / 3.0], vec![1.0, 3.0]];
        assert_abs_diff_eq!(select_delta(0.05, 0.01, &indicator), 0.0025, epsilon = 1e-16);
        assert_abs_diff_eq!(select_delta(0.1, 0.5, &indicator), 0.01, epsilon = 1e-16);
    }

    #[test]
    fn step_counts() {
        assert_eq!(RunConfig::new(0.01, 2.0).step_count(), 200);
        assert_eq!(RunConfig::new(1e-4, 0.5).step_count(), 5000);
        assert_eq!(RunConfig::new(0.3, 1.0).step_count(), 4);
        assert_eq!(RunConfig::new(0.5, 0.5).step_count(), 1);
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig::new(1.0, 0.5).validate().is_err());
        let mut c = RunConfig::new(0.1, 1.0);
        c.snapshot_times = vec![2.0];
        assert!(c.validate().is_err());
        c.snapshot_times = vec![0.0, 1.0];
        assert!(c.validate().is_ok());
        c.delta_override = Some(0.0);
        assert!(c.validate().is_err());
    }
}
