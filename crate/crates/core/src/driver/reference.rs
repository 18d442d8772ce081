//! Dense reference minimizer for small problems.
//!
//! Eliminates `m` and `phi` through the constraints, leaving the densities
//! with one mass equality per species, and runs a damped Newton method with
//! an exact Hessian. Shares nothing with the projected-gradient path except
//! the objective value used for backtracking; meant for cross-checking.

use nalgebra::{DMatrix, DVector};

use crate::assembly::{ConstraintSystem, State};
use crate::error::{PnpError, Result};
use crate::functional::{eval_objective, BoundaryTerm, ObjectiveParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceReport {
    pub iterations: usize,
    pub converged: bool,
    /// Infinity norm of the reduced gradient after removing the mass
    /// multipliers.
    pub reduced_gradient: f64,
    pub objective: f64,
}

/// Stationarity and feasibility parts of the first-order optimality
/// conditions of `min F(u) s.t. A u = b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    /// `||grad F - A^T lambda||_2` with least-squares multipliers.
    pub stationarity: f64,
    /// `||A u - b||_2`
    pub feasibility: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.feasibility)
    }
}

/// Gradient and Hessian of the objective in the full variable `u`.
fn derivatives(u: &[f64], cs: &ConstraintSystem, p: &ObjectiveParams) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let layout = cs.layout();
    let (s, n) = (layout.species, layout.cells);
    let dim = layout.dim();
    let h = p.h;
    let c = h / (2.0 * p.tau);
    let mut g = DVector::zeros(dim);
    let mut hess = DMatrix::zeros(dim, dim);
    for i in 0..s {
        for j in 0..n {
            let ri = layout.rho(i, j);
            let r = u[ri];
            if !(r > 0.0) {
                return Err(PnpError::Domain(format!("density {r} is not positive")));
            }
            let dij = p.d_center[i][j];
            // faces adjacent to cell j carrying unknowns, each with weight 1/2
            let mut faces = Vec::with_capacity(2);
            if j >= 1 {
                faces.push(layout.m(i, j));
            }
            if j + 1 < n {
                faces.push(layout.m(i, j + 1));
            }
            let q: f64 = faces.iter().map(|&f| 0.5 * u[f]).sum();
            g[ri] += -c * q * q / (r * r * dij) + h * (1.0 + r.ln());
            hess[(ri, ri)] += 2.0 * c * q * q / (r * r * r * dij) + h / r;
            for &f in &faces {
                g[f] += 0.5 * 2.0 * c * q / (r * dij);
                let cross = 0.5 * (-2.0 * c * q / (r * r * dij));
                hess[(ri, f)] += cross;
                hess[(f, ri)] += cross;
                for &f2 in &faces {
                    hess[(f, f2)] += 0.25 * 2.0 * c / (r * dij);
                }
            }
        }
    }
    let phi = |j: usize| u[layout.phi(j)];
    for j in 1..=n {
        let w = p.eps_center[j - 1] / (4.0 * h);
        let (a, b) = (layout.phi(j + 1), layout.phi(j - 1));
        let d = phi(j + 1) - phi(j - 1);
        g[a] += w * d;
        g[b] -= w * d;
        hess[(a, a)] += w;
        hess[(b, b)] += w;
        hess[(a, b)] -= w;
        hess[(b, a)] -= w;
    }
    for (term, ghost, inner) in [(p.left, 0, 1), (p.right, n + 1, n)] {
        let (gi, ii) = (layout.phi(ghost), layout.phi(inner));
        match term {
            BoundaryTerm::Robin { beta } => {
                let w = 1.0 / (4.0 * beta);
                let sum = phi(ghost) + phi(inner);
                g[gi] += w * sum;
                g[ii] += w * sum;
                for a in [gi, ii] {
                    for b in [gi, ii] {
                        hess[(a, b)] += w;
                    }
                }
            }
            BoundaryTerm::Dirichlet { eps_wall, phi_b } => {
                g[gi] -= eps_wall * phi_b / h;
                g[ii] += eps_wall * phi_b / h;
            }
            BoundaryTerm::Neumann => {}
        }
    }
    Ok((g, hess))
}

/// Affine map `rho -> u(rho) = offset + jac * rho` that satisfies every
/// transport and Poisson row whenever the masses match the anchor.
struct Elimination {
    jac: DMatrix<f64>,
    offset: DVector<f64>,
}

fn eliminate(cs: &ConstraintSystem) -> Result<Elimination> {
    let layout = cs.layout();
    let (s, n) = (layout.species, layout.cells);
    let nr = s * n;
    let nm = s * (n - 1);
    let np = n + 2;
    let a = cs.matrix().to_dense();
    let b = DVector::from_column_slice(cs.rhs());
    let tr = cs.transport_rows();
    let pr = cs.poisson_row_range();
    let m0 = layout.m_range(0).start;
    let p0 = layout.phi(0);

    let dm = a.view((tr.start, m0), (nr, nm)).into_owned();
    let dm_pinv = dm
        .pseudo_inverse(1e-12)
        .map_err(|e| PnpError::Singular(format!("transport block: {e}")))?;
    let rp = a.view((pr.start, 0), (np, nr)).into_owned();
    let pp = a.view((pr.start, p0), (np, np)).into_owned();
    let lu = pp.lu();
    let pp_inv = lu
        .try_inverse()
        .ok_or_else(|| PnpError::Singular("Poisson block is singular".into()))?;
    let bt = b.rows(tr.start, nr).into_owned();
    let bp = b.rows(pr.start, np).into_owned();

    let mut jac = DMatrix::zeros(layout.dim(), nr);
    let mut offset = DVector::zeros(layout.dim());
    jac.view_mut((0, 0), (nr, nr)).fill_with_identity();
    jac.view_mut((m0, 0), (nm, nr)).copy_from(&(-&dm_pinv));
    offset.rows_mut(m0, nm).copy_from(&(&dm_pinv * &bt));
    jac.view_mut((p0, 0), (np, nr)).copy_from(&(-(&pp_inv * &rp)));
    offset.rows_mut(p0, np).copy_from(&(&pp_inv * &bp));
    Ok(Elimination { jac, offset })
}

/// Minimize one step objective by damped Newton in the densities.
/// `tol` bounds the infinity norm of the mass-projected reduced gradient.
pub fn reference_minimizer(cs: &ConstraintSystem, p: &ObjectiveParams, tol: f64) -> Result<(State, ReferenceReport)> {
    let layout = cs.layout();
    let (s, n) = (layout.species, layout.cells);
    let nr = s * n;
    let elim = eliminate(cs)?;
    let lift = |rho: &DVector<f64>| -> Result<State> {
        let u = &elim.offset + &elim.jac * rho;
        State::from_vec(layout, u.as_slice().to_vec())
    };
    let value = |u: &State| eval_objective(u, p).total();

    let mut rho = DVector::from_iterator(nr, cs.rho_prev().iter().flatten().copied());
    if rho.iter().any(|&r| !(r > 0.0)) {
        return Err(PnpError::Domain("anchor densities must be positive".into()));
    }
    let mut u = lift(&rho)?;
    let mut f = value(&u);
    let mut report = ReferenceReport {
        iterations: 0,
        converged: false,
        reduced_gradient: f64::INFINITY,
        objective: f,
    };
    for it in 0..200 {
        report.iterations = it;
        let (g, hess) = derivatives(u.as_slice(), cs, p)?;
        let gr = elim.jac.transpose() * &g;
        let hr = elim.jac.transpose() * &hess * &elim.jac;
        // remove the per-species mean: the mass multipliers
        let mut proj = gr.clone();
        for i in 0..s {
            let mean = gr.rows(i * n, n).sum() / n as f64;
            proj.rows_mut(i * n, n).add_scalar_mut(-mean);
        }
        report.reduced_gradient = proj.amax();
        if report.reduced_gradient <= tol {
            report.converged = true;
            break;
        }
        // unknowns scaled by sqrt(rho): the entropy Hessian grows like 1/rho near the boundary
        let d = rho.map(f64::sqrt);
        let mut kkt = DMatrix::zeros(nr + s, nr + s);
        for a in 0..nr {
            for b in 0..nr {
                kkt[(a, b)] = d[a] * hr[(a, b)] * d[b];
            }
        }
        for i in 0..s {
            for j in 0..n {
                let k = i * n + j;
                kkt[(nr + i, k)] = d[k];
                kkt[(k, nr + i)] = d[k];
            }
        }
        let mut rhs = DVector::zeros(nr + s);
        rhs.rows_mut(0, nr).copy_from(&(-gr.component_mul(&d)));
        let sol = kkt
            .lu()
            .solve(&rhs)
            .ok_or_else(|| PnpError::Singular("Newton system is singular".into()))?;
        let step = sol.rows(0, nr).component_mul(&d);
        // no density loses more than half its value per iteration
        let mut alpha: f64 = 1.0;
        for k in 0..nr {
            if step[k] < 0.0 {
                alpha = alpha.min(-0.5 * rho[k] / step[k]);
            }
        }
        let slope = gr.dot(&step);
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &rho + alpha * &step;
            if trial.iter().all(|&r| r > 0.0) {
                let ut = lift(&trial)?;
                let ft = value(&ut);
                // slack at rounding level so that the final quadratic steps are taken
                if ft <= f + 1e-4 * alpha * slope + 1e-14 * f.abs().max(1.0) {
                    rho = trial;
                    u = ut;
                    f = ft;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    report.objective = f;
    Ok((u, report))
}

/// First-order optimality residual of `u` for the step problem of `cs`,
/// computed with dense least squares.
pub fn kkt_residual(cs: &ConstraintSystem, p: &ObjectiveParams, u: &State) -> Result<KktResidual> {
    let a = cs.matrix().to_dense();
    let (g, _) = derivatives(u.as_slice(), cs, p)?;
    let aat = &a * a.transpose();
    let lambda = aat
        .cholesky()
        .ok_or_else(|| PnpError::Singular("A A^T is not positive definite".into()))?
        .solve(&(&a * &g));
    let stationarity = (&g - a.transpose() * lambda).norm();
    let feasibility = cs.residual_norm(u.as_slice());
    Ok(KktResidual {
        stationarity,
        feasibility,
    })
}
