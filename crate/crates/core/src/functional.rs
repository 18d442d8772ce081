//! The fully discrete objective of one step and its gradient.
//!
//! ```text
//! F_h(rho, m, phi) = h/(2 tau) sum_{i,j} mhat_{i,j}^2 / (rho_{i,j} D_{i,j})
//!                  + h sum_{i,j} rho_{i,j} log rho_{i,j}
//!                  + sum_j eps_j / (8h) (phi_{j+1} - phi_{j-1})^2
//!                  + boundary terms
//! ```
//!
//! `mhat` is the face average of the momenta, squared after averaging. The
//! boundary term of a Robin end is `(phi_0 + phi_1)^2 / (8 beta)`; a
//! Dirichlet end contributes `-eps phi_b d_n phi` with the one-sided ghost
//! difference for the outward derivative; a Neumann end contributes nothing.
//! Everything except the transport term is the diagnostic free energy.

use crate::assembly::{State, StateLayout};
use crate::error::{PnpError, Result};
use crate::mesh::{face_average_into, Grid1D};
use crate::model::{BoundaryEnd, BoundaryKind, SampledModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundaryTerm {
    Robin { beta: f64 },
    Dirichlet { eps_wall: f64, phi_b: f64 },
    Neumann,
}

impl BoundaryTerm {
    fn from_end(end: &BoundaryEnd, eps_wall: f64) -> Self {
        match end.kind {
            BoundaryKind::Robin => BoundaryTerm::Robin { beta: end.beta },
            BoundaryKind::Dirichlet => BoundaryTerm::Dirichlet {
                eps_wall,
                phi_b: end.phi_b,
            },
            BoundaryKind::Neumann => BoundaryTerm::Neumann,
        }
    }

    /// Value for the end whose ghost is `ghost` and adjacent interior value
    /// is `inner`.
    fn value(&self, ghost: f64, inner: f64, h: f64) -> f64 {
        match *self {
            BoundaryTerm::Robin { beta } => (ghost + inner).powi(2) / (8.0 * beta),
            BoundaryTerm::Dirichlet { eps_wall, phi_b } => -eps_wall * phi_b * (ghost - inner) / h,
            BoundaryTerm::Neumann => 0.0,
        }
    }

    /// Partials with respect to (ghost, inner).
    fn partials(&self, ghost: f64, inner: f64, h: f64) -> (f64, f64) {
        match *self {
            BoundaryTerm::Robin { beta } => {
                let d = (ghost + inner) / (4.0 * beta);
                (d, d)
            }
            BoundaryTerm::Dirichlet { eps_wall, phi_b } => {
                let d = eps_wall * phi_b / h;
                (-d, d)
            }
            BoundaryTerm::Neumann => (0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveParams {
    pub tau: f64,
    pub h: f64,
    /// Per species, diffusion at centers.
    pub d_center: Vec<Vec<f64>>,
    pub eps_center: Vec<f64>,
    pub left: BoundaryTerm,
    pub right: BoundaryTerm,
}

impl ObjectiveParams {
    pub fn new(sm: &SampledModel, grid: &Grid1D, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(PnpError::Config(format!("time step must be positive, got {tau}")));
        }
        let n = grid.n();
        Ok(ObjectiveParams {
            tau,
            h: grid.h(),
            d_center: sm.d_center.clone(),
            eps_center: sm.eps_center.clone(),
            left: BoundaryTerm::from_end(&sm.left, sm.eps_face[0]),
            right: BoundaryTerm::from_end(&sm.right, sm.eps_face[n]),
        })
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout::new(self.d_center.len(), self.eps_center.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    pub entropy: f64,
    pub dielectric: f64,
    pub boundary: f64,
    pub total_objective: f64,
    pub diagnostic_energy: f64,
}

/// Objective value with barrier semantics: outside the closed positive cone
/// (or on its boundary with nonzero flux) the objective is infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Finite(EnergyBreakdown),
    Infinite,
}

impl Objective {
    pub fn total(&self) -> f64 {
        match self {
            Objective::Finite(e) => e.total_objective,
            Objective::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Objective::Infinite)
    }

    pub fn breakdown(&self) -> Option<&EnergyBreakdown> {
        match self {
            Objective::Finite(e) => Some(e),
            Objective::Infinite => None,
        }
    }
}

fn potential_terms(phi: &[f64], p: &ObjectiveParams) -> (f64, f64) {
    let n = p.eps_center.len();
    let h = p.h;
    let mut dielectric = 0.0;
    for j in 1..=n {
        let d = phi[j + 1] - phi[j - 1];
        dielectric += p.eps_center[j - 1] * d * d;
    }
    dielectric /= 8.0 * h;
    let boundary = p.left.value(phi[0], phi[1], h) + p.right.value(phi[n + 1], phi[n], h);
    (dielectric, boundary)
}

pub fn eval_objective(u: &State, p: &ObjectiveParams) -> Objective {
    let layout = u.layout();
    let n = layout.cells;
    let h = p.h;
    let mut kinetic = 0.0;
    let mut entropy = 0.0;
    let mut mhat = vec![0.0; n];
    for i in 0..layout.species {
        face_average_into(u.m(i), &mut mhat);
        let rho = u.rho(i);
        let d = &p.d_center[i];
        for j in 0..n {
            let r = rho[j];
            let q = mhat[j];
            if r > 0.0 {
                kinetic += q * q / (r * d[j]);
                entropy += r * r.ln();
            } else if r < 0.0 || q != 0.0 || r.is_nan() {
                return Objective::Infinite;
            }
        }
    }
    kinetic *= h / (2.0 * p.tau);
    entropy *= h;
    let (dielectric, boundary) = potential_terms(u.phi(), p);
    let diagnostic_energy = entropy + dielectric + boundary;
    let total_objective = kinetic + diagnostic_energy;
    if !total_objective.is_finite() {
        return Objective::Infinite;
    }
    Objective::Finite(EnergyBreakdown {
        kinetic,
        entropy,
        dielectric,
        boundary,
        total_objective,
        diagnostic_energy,
    })
}

/// Total objective only, without the breakdown. `+inf` outside the cone.
pub(crate) fn objective_value(u: &[f64], layout: StateLayout, p: &ObjectiveParams, mhat: &mut [f64]) -> f64 {
    let n = layout.cells;
    let h = p.h;
    let mut kinetic = 0.0;
    let mut entropy = 0.0;
    for i in 0..layout.species {
        face_average_into(&u[layout.m_range(i)], mhat);
        let rho = &u[layout.rho_range(i)];
        let d = &p.d_center[i];
        for j in 0..n {
            let r = rho[j];
            if !(r > 0.0) {
                return f64::INFINITY;
            }
            let q = mhat[j];
            kinetic += q * q / (r * d[j]);
            entropy += r * r.ln();
        }
    }
    let (dielectric, boundary) = potential_terms(&u[layout.phi_range()], p);
    kinetic * h / (2.0 * p.tau) + entropy * h + dielectric + boundary
}

/// Diagnostic free energy: entropy + dielectric + boundary.
pub fn eval_energy(u: &State, p: &ObjectiveParams) -> f64 {
    match eval_objective(u, p) {
        Objective::Finite(e) => e.diagnostic_energy,
        Objective::Infinite => f64::INFINITY,
    }
}

pub fn eval_gradient(u: &State, p: &ObjectiveParams) -> Result<Vec<f64>> {
    let mut g = vec![0.0; u.layout().dim()];
    let mut mhat = vec![0.0; u.layout().cells];
    gradient_into(u.as_slice(), u.layout(), p, &mut g, &mut mhat)?;
    Ok(g)
}

pub(crate) fn gradient_into(
    u: &[f64],
    layout: StateLayout,
    p: &ObjectiveParams,
    g: &mut [f64],
    mhat: &mut [f64],
) -> Result<()> {
    let n = layout.cells;
    let h = p.h;
    let c = h / (2.0 * p.tau);
    for i in 0..layout.species {
        face_average_into(&u[layout.m_range(i)], mhat);
        let rr = layout.rho_range(i);
        let rho = &u[rr.clone()];
        let d = &p.d_center[i];
        // reuse mhat to hold mhat / (rho D) after the rho partials
        for j in 0..n {
            let r = rho[j];
            if !(r > 0.0) {
                return Err(PnpError::Domain(format!(
                    "gradient needs positive densities, species {} cell {} has {r}",
                    i + 1,
                    j + 1
                )));
            }
            let q = mhat[j];
            g[rr.start + j] = -c * q * q / (r * r * d[j]) + h * (1.0 + r.ln());
            mhat[j] = q / (r * d[j]);
        }
        let mr = layout.m_range(i);
        for k in 0..n - 1 {
            g[mr.start + k] = c * (mhat[k] + mhat[k + 1]);
        }
    }
    let pr = layout.phi_range();
    let phi = &u[pr.clone()];
    let gp = &mut g[pr];
    gp.iter_mut().for_each(|v| *v = 0.0);
    let k = 1.0 / (4.0 * h);
    for j in 1..=n {
        let w = k * p.eps_center[j - 1] * (phi[j + 1] - phi[j - 1]);
        gp[j + 1] += w;
        gp[j - 1] -= w;
    }
    let (g0, g1) = p.left.partials(phi[0], phi[1], h);
    gp[0] += g0;
    gp[1] += g1;
    let (gn1, gn) = p.right.partials(phi[n + 1], phi[n], h);
    gp[n + 1] += gn1;
    gp[n] += gn;
    Ok(())
}

/// Residuals of the three interpolation identities behind the convexity of
/// the objective, for `X(theta) = theta X0 + (1 - theta) X1`:
///
/// - `square`: `X^2 - theta X0^2 - (1-theta) X1^2 + theta (1-theta) (X1 - X0)^2`, zero;
/// - `entropy`: `X log X - theta X0 log X0 - (1-theta) X1 log X1`, never positive;
/// - `transport`: `Y^2/X - theta Y0^2/X0 - (1-theta) Y1^2/X1
///   + theta (1-theta) (X1 Y0 - X0 Y1)^2 / (X0 X1 X)`, zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityResiduals {
    pub square: f64,
    pub entropy: f64,
    pub transport: f64,
}

pub fn interp_identity_residuals(x0: f64, x1: f64, y0: f64, y1: f64, theta: f64) -> Result<IdentityResiduals> {
    if !(x0 > 0.0 && x1 > 0.0) {
        return Err(PnpError::Domain(format!("need X0, X1 > 0, got {x0}, {x1}")));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(PnpError::Domain(format!("theta must lie in (0, 1), got {theta}")));
    }
    let w = theta * (1.0 - theta);
    let x = theta * x0 + (1.0 - theta) * x1;
    let y = theta * y0 + (1.0 - theta) * y1;
    let square = x * x - theta * x0 * x0 - (1.0 - theta) * x1 * x1 + w * (x1 - x0).powi(2);
    let entropy = x * x.ln() - theta * x0 * x0.ln() - (1.0 - theta) * x1 * x1.ln();
    let transport = y * y / x - theta * y0 * y0 / x0 - (1.0 - theta) * y1 * y1 / x1
        + w * (x1 * y0 - x0 * y1).powi(2) / (x0 * x1 * x);
    Ok(IdentityResiduals {
        square,
        entropy,
        transport,
    })
}
