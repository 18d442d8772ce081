//! Projected gradient descent on the affine set `A u = b`.
//!
//! The search direction is `-P g` with `P = I - A^T (A A^T)^{-1} A` the
//! orthogonal projector onto the nullspace of `A`. `P` is never formed; only
//! the banded Gram matrix `A A^T` is factored, once per constraint matrix.
//! Positivity of the densities is kept by rejecting trial points outside
//! the open cone during backtracking.

use std::fmt;
use std::ops::Range;

use crate::assembly::{ConstraintSystem, State};
use crate::banded::GramFactor;
use crate::error::{PnpError, Result};
use crate::functional::{gradient_into, objective_value, ObjectiveParams};
use crate::sparse::CsrMatrix;

/// How the first trial step of each backtracking search is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepInit {
    /// Always start from `eta0`.
    #[default]
    Fixed,
    /// Start from the Barzilai-Borwein step `s.s / s.y` of the previous
    /// iteration (falls back to `eta0` when `s.y <= 0`).
    BarzilaiBorwein,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgParams {
    pub tol: f64,
    pub iter_max: usize,
    pub armijo_c: f64,
    pub shrink: f64,
    pub eta0: f64,
    pub max_halvings: usize,
    pub enforce_clamp: bool,
    pub step_init: StepInit,
}

impl Default for PgParams {
    fn default() -> Self {
        PgParams {
            tol: 1e-6,
            iter_max: 5000,
            armijo_c: 1e-4,
            shrink: 0.5,
            eta0: 1.0,
            max_halvings: 60,
            enforce_clamp: false,
            step_init: StepInit::Fixed,
        }
    }
}

impl PgParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tol > 0.0
            && self.iter_max > 0
            && self.armijo_c > 0.0
            && self.armijo_c < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.eta0 > 0.0;
        if ok {
            Ok(())
        } else {
            Err(PnpError::Config(format!("invalid solver parameters {self:?}")))
        }
    }
}

/// Applies the nullspace projector of a constraint matrix.
#[derive(Debug, Clone)]
pub struct Projector {
    // rows of A scaled to unit norm; the projector does not depend on row scaling
    a: CsrMatrix,
    inv_norm: Vec<f64>,
    factor: GramFactor,
}

pub fn build_projector(cs: &ConstraintSystem) -> Result<Projector> {
    let a = cs.matrix();
    let mut scaled = CsrMatrix::new(a.ncols());
    let mut inv_norm = Vec::with_capacity(a.nrows());
    for r in 0..a.nrows() {
        let norm = a.row_norm(r);
        if norm == 0.0 {
            return Err(PnpError::Singular(format!("constraint row {r} is empty")));
        }
        let row: Vec<(usize, f64)> = a.row(r).map(|(c, v)| (c, v / norm)).collect();
        scaled.push_row(&row);
        inv_norm.push(1.0 / norm);
    }
    let factor = GramFactor::new(&scaled, &cs.band_order())
        .map_err(|e| PnpError::Singular(format!("Gram matrix factorization failed: {e}")))?;
    Ok(Projector {
        a: scaled,
        inv_norm,
        factor,
    })
}

/// Scratch buffers for repeated projections.
#[derive(Debug, Clone)]
pub struct ProjectorWorkspace {
    av: Vec<f64>,
    lam: Vec<f64>,
    scratch: Vec<f64>,
    atl: Vec<f64>,
}

impl Projector {
    pub fn workspace(&self) -> ProjectorWorkspace {
        let m = self.a.nrows();
        ProjectorWorkspace {
            av: vec![0.0; m],
            lam: vec![0.0; m],
            scratch: vec![0.0; m],
            atl: vec![0.0; self.a.ncols()],
        }
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply_into(v, &mut out, &mut self.workspace());
        out
    }

    /// `out = v - A^T (A A^T)^{-1} A v`
    ///
    /// `A A^T` inherits the squared condition number of the discrete
    /// Laplacian, so a single solve leaves a range-space component of
    /// relative size `cond * eps` in the result. One refinement pass (the
    /// same projection applied to the result) removes it.
    pub fn apply_into(&self, v: &[f64], out: &mut [f64], ws: &mut ProjectorWorkspace) {
        out.copy_from_slice(v);
        for _ in 0..2 {
            self.remove_range_component(out, ws);
        }
    }

    fn remove_range_component(&self, x: &mut [f64], ws: &mut ProjectorWorkspace) {
        self.a.mul_vec_into(x, &mut ws.av);
        self.factor.solve(&ws.av, &mut ws.lam, &mut ws.scratch);
        self.a.tr_mul_vec_into(&ws.lam, &mut ws.atl);
        for (xi, ai) in x.iter_mut().zip(&ws.atl) {
            *xi -= ai;
        }
    }
}

impl Projector {
    /// Move `u` to the nearest point of `A u = b` (one least-squares
    /// correction `u -= A^T (A A^T)^{-1} (A u - b)`). Removes the rounding
    /// drift that accumulates over many projected steps.
    pub fn restore_feasibility(&self, u: &mut [f64], b: &[f64], ws: &mut ProjectorWorkspace) {
        self.a.mul_vec_into(u, &mut ws.av);
        for ((r, bi), s) in ws.av.iter_mut().zip(b).zip(&self.inv_norm) {
            *r -= bi * s;
        }
        self.factor.solve(&ws.av, &mut ws.lam, &mut ws.scratch);
        self.a.tr_mul_vec_into(&ws.lam, &mut ws.atl);
        for (ui, ai) in u.iter_mut().zip(&ws.atl) {
            *ui -= ai;
        }
    }
}

/// `-P g`
pub fn project_step_direction(pr: &Projector, g: &[f64]) -> Vec<f64> {
    let mut d = pr.apply(g);
    d.iter_mut().for_each(|v| *v = -*v);
    d
}

/// Backtracking search along `direction` from `u`.
///
/// Returns the largest `eta = eta_init * shrink^k`, `k <= max_halvings`, such
/// that every entry of `positive` stays strictly positive and the Armijo
/// condition `F(u + eta d) <= F(u) + c eta slope` holds, together with the
/// objective value there. `eta = 0` means no step was acceptable.
#[allow(clippy::too_many_arguments)]
pub fn line_search<F>(
    u: &[f64],
    direction: &[f64],
    f0: f64,
    slope: f64,
    eta_init: f64,
    p: &PgParams,
    positive: Range<usize>,
    mut objective: F,
) -> (f64, f64)
where
    F: FnMut(&[f64]) -> f64,
{
    let mut trial = vec![0.0; u.len()];
    line_search_with(
        u,
        direction,
        f0,
        slope,
        eta_init,
        p,
        positive,
        &mut objective,
        &mut trial,
    )
}

#[allow(clippy::too_many_arguments)]
fn line_search_with<F>(
    u: &[f64],
    direction: &[f64],
    f0: f64,
    slope: f64,
    eta_init: f64,
    p: &PgParams,
    positive: Range<usize>,
    objective: &mut F,
    trial: &mut [f64],
) -> (f64, f64)
where
    F: FnMut(&[f64]) -> f64,
{
    if !(slope < 0.0) {
        return (0.0, f0);
    }
    // largest step keeping the constrained block positive
    let mut eta_max = f64::INFINITY;
    for k in positive.clone() {
        if direction[k] < 0.0 {
            eta_max = eta_max.min(-u[k] / direction[k]);
        }
    }
    let mut eta = eta_init;
    for _ in 0..=p.max_halvings {
        if eta < eta_max {
            for ((t, ui), di) in trial.iter_mut().zip(u).zip(direction) {
                *t = ui + eta * di;
            }
            if trial[positive.clone()].iter().all(|&r| r > 0.0) {
                let f = objective(trial);
                if f.is_finite() && f <= f0 + p.armijo_c * eta * slope {
                    return (eta, f);
                }
            }
        }
        eta *= p.shrink;
    }
    (0.0, f0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgStatus {
    Converged,
    MaxIterations,
    Stalled,
}

impl fmt::Display for PgStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PgStatus::Converged => "converged",
            PgStatus::MaxIterations => "max-iterations",
            PgStatus::Stalled => "stalled",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgReport {
    pub iterations: usize,
    pub status: PgStatus,
    /// `||A u - b||` at the returned iterate (after clamping, if any).
    pub final_residual: f64,
    /// Largest feasibility residual over all accepted iterates.
    pub max_residual: f64,
    pub final_step: f64,
    /// `||eta * delta_u||` of the last accepted step.
    pub step_norm: f64,
    pub objective_start: f64,
    pub objective_end: f64,
    /// True if every accepted step decreased the objective.
    pub monotone: bool,
    /// Smallest density over all accepted iterates.
    pub min_density: f64,
    pub clamp_fired: bool,
    /// Number of feasibility restorations applied.
    pub restorations: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimize the step objective over `A u = b` starting from the feasible
/// point `u0`.
pub fn pg_solve(
    u0: &State,
    cs: &ConstraintSystem,
    projector: &Projector,
    params: &ObjectiveParams,
    p: &PgParams,
) -> Result<(State, PgReport)> {
    p.validate()?;
    let layout = u0.layout();
    if layout != cs.layout() || projector.dim() != layout.dim() {
        return Err(PnpError::LengthMismatch {
            expected: cs.layout().dim(),
            got: layout.dim(),
        });
    }
    let dim = layout.dim();
    let rho_block = layout.rho_block();
    let mut u = u0.as_slice().to_vec();
    let mut mhat = vec![0.0; layout.cells];
    let mut mhat_ls = vec![0.0; layout.cells];
    let mut g = vec![0.0; dim];
    let mut g_prev = vec![0.0; dim];
    let mut d = vec![0.0; dim];
    let mut trial = vec![0.0; dim];
    let mut ws = projector.workspace();

    let mut f = objective_value(&u, layout, params, &mut mhat);
    if !f.is_finite() {
        return Err(PnpError::Domain("objective is not finite at the starting point".into()));
    }
    let objective_start = f;
    gradient_into(&u, layout, params, &mut g, &mut mhat)?;

    let mut report = PgReport {
        iterations: 0,
        status: PgStatus::MaxIterations,
        final_residual: cs.residual_norm(&u),
        max_residual: 0.0,
        final_step: 0.0,
        step_norm: 0.0,
        objective_start,
        objective_end: f,
        monotone: true,
        min_density: u[rho_block.clone()].iter().copied().fold(f64::INFINITY, f64::min),
        clamp_fired: false,
        restorations: 0,
    };
    // restore well before the feasibility tolerance is at risk
    let restore_above = 1e-2 * cs.feasibility_tolerance();
    report.max_residual = report.final_residual;
    let mut last_step: Option<f64> = None;

    for k in 1..=p.iter_max {
        report.iterations = k;
        projector.apply_into(&g, &mut d, &mut ws);
        d.iter_mut().for_each(|v| *v = -*v);
        let slope = dot(&g, &d);
        if !slope.is_finite() {
            return Err(PnpError::Domain("non-finite search direction".into()));
        }
        if norm(&d) == 0.0 || slope >= 0.0 {
            report.step_norm = 0.0;
            report.final_step = 0.0;
            report.status = PgStatus::Converged;
            break;
        }
        let eta_init = match (p.step_init, last_step) {
            (StepInit::BarzilaiBorwein, Some(eta_bb)) => eta_bb,
            _ => p.eta0,
        };
        let mut obj = |x: &[f64]| objective_value(x, layout, params, &mut mhat_ls);
        let (eta, f_new) = line_search_with(&u, &d, f, slope, eta_init, p, rho_block.clone(), &mut obj, &mut trial);
        if eta == 0.0 {
            report.status = PgStatus::Stalled;
            report.final_step = 0.0;
            break;
        }
        std::mem::swap(&mut u, &mut trial);
        if f_new > f {
            report.monotone = false;
        }
        f = f_new;
        let step_norm = eta * norm(&d);
        if p.enforce_clamp {
            let delta = cs.delta();
            for r in &mut u[rho_block.clone()] {
                if *r < delta {
                    *r = delta;
                    report.clamp_fired = true;
                }
            }
            if report.clamp_fired {
                f = objective_value(&u, layout, params, &mut mhat);
            }
        }
        let mut residual = cs.residual_norm(&u);
        if residual > restore_above {
            trial.copy_from_slice(&u);
            projector.restore_feasibility(&mut trial, cs.rhs(), &mut ws);
            let restored = cs.residual_norm(&trial);
            if restored < residual && trial[rho_block.clone()].iter().all(|&r| r > 0.0) {
                std::mem::swap(&mut u, &mut trial);
                residual = restored;
                f = objective_value(&u, layout, params, &mut mhat);
                report.restorations += 1;
            }
        }
        report.max_residual = report.max_residual.max(residual);
        report.final_residual = residual;
        report.final_step = eta;
        report.step_norm = step_norm;
        report.min_density = u[rho_block.clone()].iter().copied().fold(report.min_density, f64::min);

        std::mem::swap(&mut g, &mut g_prev);
        gradient_into(&u, layout, params, &mut g, &mut mhat)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(PnpError::Domain("non-finite gradient at an accepted iterate".into()));
        }
        if p.step_init == StepInit::BarzilaiBorwein {
            // s = eta d, y = g - g_prev
            let mut sy = 0.0;
            for i in 0..dim {
                sy += eta * d[i] * (g[i] - g_prev[i]);
            }
            let ss = step_norm * step_norm;
            last_step = if sy > 0.0 {
                Some((ss / sy).clamp(1e-12, 1e12))
            } else {
                None
            };
        }
        if residual + step_norm <= p.tol {
            report.status = PgStatus::Converged;
            break;
        }
    }
    report.objective_end = f;
    let state = State::from_vec(layout, u)?;
    Ok((state, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::build_constraint_system;
    use crate::expr::Expr;
    use crate::mesh::Grid1D;
    use crate::model::{sample, BoundaryEnd, PnpModel, SpeciesSpec};
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_system(s: usize, n: usize, left: BoundaryEnd, right: BoundaryEnd) -> (ConstraintSystem, Grid1D) {
        let model = PnpModel {
            species: (0..s)
                .map(|i| SpeciesSpec {
                    z: if i % 2 == 0 { 1.0 } else { -1.0 },
                    diffusion: Expr::parse("1 + 0.5*x").unwrap(),
                    rho_in: Expr::parse("1.5 + 0.5*sin(3*x)").unwrap(),
                })
                .collect(),
            epsilon: Expr::parse("1 + x^2").unwrap(),
            fixed_charge: Expr::parse("0.2*x").unwrap(),
            left,
            right,
        };
        let grid = Grid1D::new(0.0, 1.0, n).unwrap();
        let sm = sample(&model, &grid);
        (build_constraint_system(&sm, &grid, &sm.rho0, 1e-3).unwrap(), grid)
    }

    fn dense_projection(cs: &ConstraintSystem, v: &[f64]) -> Vec<f64> {
        let a = cs.matrix().to_dense();
        let gram = &a * a.transpose();
        let av = &a * DVector::from_column_slice(v);
        let lam = gram.lu().solve(&av).unwrap();
        let corr = a.transpose() * lam;
        v.iter().zip(corr.iter()).map(|(x, c)| x - c).collect()
    }

    #[test]
    fn projector_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (left, right) in [
            (BoundaryEnd::dirichlet(0.0), BoundaryEnd::dirichlet(1.0)),
            (BoundaryEnd::robin(0.3, 1.0), BoundaryEnd::neumann(0.2)),
            (BoundaryEnd::neumann(0.0), BoundaryEnd::neumann(0.0)),
        ] {
            let (cs, _) = small_system(1, 4, left, right);
            let pr = build_projector(&cs).unwrap();
            let v: Vec<f64> = (0..cs.layout().dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let pv = pr.apply(&v);
            let oracle = dense_projection(&cs, &v);
            for (x, y) in pv.iter().zip(&oracle) {
                assert!((x - y).abs() < 1e-10, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn projector_fixed_points_and_annihilation() {
        let (cs, _) = small_system(2, 6, BoundaryEnd::robin(0.5, 0.0), BoundaryEnd::dirichlet(1.0));
        let pr = build_projector(&cs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<f64> = (0..cs.matrix().nrows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let row_space = cs.matrix().tr_mul_vec(&w);
        let scale = norm(&row_space);
        assert!(norm(&pr.apply(&row_space)) <= 1e-10 * scale);

        let v: Vec<f64> = (0..cs.layout().dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pv = pr.apply(&v);
        let ppv = pr.apply(&pv);
        let diff: Vec<f64> = ppv.iter().zip(&pv).map(|(a, b)| a - b).collect();
        assert!(norm(&diff) <= 1e-10 * norm(&v));
        let apv = cs.matrix().mul_vec(&pv);
        assert!(norm(&apv) <= 1e-10 * norm(&v) * 1e3);

        let g0 = project_step_direction(&pr, &vec![0.0; v.len()]);
        assert!(g0.iter().all(|&x| x == 0.0));
        let d = project_step_direction(&pr, &pv);
        for (a, b) in d.iter().zip(&pv) {
            assert!((a + b).abs() < 1e-10);
        }
    }

    #[test]
    fn quadratic_armijo_accepts_unit_step() {
        let u = vec![1.0, -2.0, 0.5];
        let d: Vec<f64> = u.iter().map(|x| -x).collect();
        let f = |x: &[f64]| 0.5 * x.iter().map(|v| v * v).sum::<f64>();
        let f0 = f(&u);
        let slope = dot(&u, &d);
        let (eta, fnew) = line_search(&u, &d, f0, slope, 1.0, &PgParams::default(), 0..0, f);
        assert_eq!(eta, 1.0);
        assert_eq!(fnew, 0.0);
    }

    #[test]
    fn barrier_rejects_negative_trial() {
        // f decreases linearly along d, so only positivity limits the step
        let u = vec![0.5];
        let d = vec![-1.0];
        let f = |x: &[f64]| x[0];
        let (eta, fnew) = line_search(&u, &d, f(&u), -1.0, 1.0, &PgParams::default(), 0..1, f);
        assert_eq!(eta, 0.25);
        assert_eq!(fnew, 0.25);
    }

    #[test]
    fn ascent_direction_returns_zero() {
        let u = vec![1.0];
        let (eta, _) = line_search(&u, &[1.0], 1.0, 0.5, 1.0, &PgParams::default(), 0..0, |_| 0.0);
        assert_eq!(eta, 0.0);
    }
}
