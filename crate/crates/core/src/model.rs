//! Problem definition: charged species, permittivity, fixed charge, boundary
//! conditions for the potential and initial densities.

use std::fmt;

use crate::error::{PnpError, Result};
use crate::expr::Expr;
use crate::mesh::Grid1D;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
    Robin,
}

impl BoundaryKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryKind::Dirichlet => "dirichlet",
            BoundaryKind::Neumann => "neumann",
            BoundaryKind::Robin => "robin",
        }
    }
}

impl std::str::FromStr for BoundaryKind {
    type Err = PnpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dirichlet" => Ok(BoundaryKind::Dirichlet),
            "neumann" => Ok(BoundaryKind::Neumann),
            "robin" => Ok(BoundaryKind::Robin),
            other => Err(PnpError::Config(format!("unknown boundary kind '{other}'"))),
        }
    }
}

/// One end of the domain: `alpha * phi + beta * eps * d(phi)/dn = phi_b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryEnd {
    pub kind: BoundaryKind,
    /// Robin coefficient; ignored for Dirichlet and Neumann ends.
    pub beta: f64,
    pub phi_b: f64,
}

impl BoundaryEnd {
    pub fn dirichlet(phi_b: f64) -> Self {
        BoundaryEnd {
            kind: BoundaryKind::Dirichlet,
            beta: 0.0,
            phi_b,
        }
    }

    pub fn neumann(phi_b: f64) -> Self {
        BoundaryEnd {
            kind: BoundaryKind::Neumann,
            beta: 1.0,
            phi_b,
        }
    }

    pub fn robin(beta: f64, phi_b: f64) -> Self {
        BoundaryEnd {
            kind: BoundaryKind::Robin,
            beta,
            phi_b,
        }
    }

    pub fn alpha(&self) -> f64 {
        match self.kind {
            BoundaryKind::Dirichlet | BoundaryKind::Robin => 1.0,
            BoundaryKind::Neumann => 0.0,
        }
    }

    /// Effective `beta` of the general boundary operator.
    pub fn beta_eff(&self) -> f64 {
        match self.kind {
            BoundaryKind::Dirichlet => 0.0,
            BoundaryKind::Neumann => 1.0,
            BoundaryKind::Robin => self.beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesSpec {
    /// Rescaled charge.
    pub z: f64,
    /// Diffusion coefficient, strictly positive.
    pub diffusion: Expr,
    /// Initial density, nonnegative.
    pub rho_in: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpModel {
    pub species: Vec<SpeciesSpec>,
    pub epsilon: Expr,
    /// Permanent (fixed) charge density.
    pub fixed_charge: Expr,
    pub left: BoundaryEnd,
    pub right: BoundaryEnd,
}

impl PnpModel {
    pub fn species_count(&self) -> usize {
        self.species.len()
    }

    pub fn pure_neumann(&self) -> bool {
        self.left.kind == BoundaryKind::Neumann && self.right.kind == BoundaryKind::Neumann
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    NoSpecies,
    NonFinite { what: String, x: f64 },
    NonpositiveDiffusion { species: usize, x: f64, value: f64 },
    NonpositivePermittivity { x: f64, value: f64 },
    NegativeInitialDensity { species: usize, x: f64, value: f64 },
    BadRobinBeta { end: &'static str, beta: f64 },
    NeumannIncompatible { residual: f64, tolerance: f64 },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::NoSpecies => write!(f, "model has no species"),
            ValidationIssue::NonFinite { what, x } => write!(f, "{what} is not finite at x = {x}"),
            ValidationIssue::NonpositiveDiffusion { species, x, value } => {
                write!(f, "diffusion of species {} is {value} <= 0 at x = {x}", species + 1)
            }
            ValidationIssue::NonpositivePermittivity { x, value } => {
                write!(f, "permittivity is {value} <= 0 at x = {x}")
            }
            ValidationIssue::NegativeInitialDensity { species, x, value } => write!(
                f,
                "initial density of species {} is {value} < 0 at x = {x}",
                species + 1
            ),
            ValidationIssue::BadRobinBeta { end, beta } => {
                write!(f, "robin coefficient at {end} end must be > 0, got {beta}")
            }
            ValidationIssue::NeumannIncompatible { residual, tolerance } => write!(
                f,
                "pure Neumann data violate the compatibility condition: residual {residual:e} > {tolerance:e}"
            ),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
    /// Discrete compatibility residual, present for pure-Neumann models.
    pub compatibility_residual: Option<f64>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn into_result(self) -> Result<Self> {
        if self.is_valid() {
            Ok(self)
        } else {
            let msg = self.issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; ");
            Err(PnpError::Validation(msg))
        }
    }
}

/// Residual of the discrete solvability condition for the pure-Neumann
/// Poisson block, together with the tolerance it is held to.
///
/// Summing `h` times the interior rows telescopes the fluxes down to the two
/// ghost rows, which leaves `h sum(f + sum z rho) + phi_b(a) + phi_b(b)`.
pub fn neumann_compatibility(
    h: f64,
    fixed_charge: &[f64],
    charges: &[f64],
    densities: &[Vec<f64>],
    left: &BoundaryEnd,
    right: &BoundaryEnd,
) -> (f64, f64) {
    let mut total = 0.0;
    let mut scale = left.phi_b.abs() + right.phi_b.abs();
    for (j, f) in fixed_charge.iter().enumerate() {
        let mut q = *f;
        scale += h * f.abs();
        for (z, rho) in charges.iter().zip(densities) {
            q += z * rho[j];
            scale += h * (z * rho[j]).abs();
        }
        total += h * q;
    }
    let residual = (total + left.phi_b + right.phi_b).abs();
    (residual, 1e-10 * (1.0 + scale))
}

pub fn validate(model: &PnpModel, grid: &Grid1D) -> ValidationReport {
    let mut issues = Vec::new();
    if model.species.is_empty() {
        issues.push(ValidationIssue::NoSpecies);
    }
    let check_finite = |what: &str, x: f64, v: f64, issues: &mut Vec<ValidationIssue>| {
        if !v.is_finite() {
            issues.push(ValidationIssue::NonFinite {
                what: what.to_string(),
                x,
            });
            false
        } else {
            true
        }
    };

    let sample_points: Vec<f64> = grid.faces().iter().chain(grid.centers()).copied().collect();
    for &x in &sample_points {
        let e = model.epsilon.eval(x);
        if check_finite("permittivity", x, e, &mut issues) && e <= 0.0 {
            issues.push(ValidationIssue::NonpositivePermittivity { x, value: e });
        }
    }
    for &x in grid.centers() {
        let f = model.fixed_charge.eval(x);
        check_finite("fixed charge", x, f, &mut issues);
        for (i, sp) in model.species.iter().enumerate() {
            let d = sp.diffusion.eval(x);
            if check_finite("diffusion", x, d, &mut issues) && d <= 0.0 {
                issues.push(ValidationIssue::NonpositiveDiffusion {
                    species: i,
                    x,
                    value: d,
                });
            }
            let r = sp.rho_in.eval(x);
            if check_finite("initial density", x, r, &mut issues) && r < 0.0 {
                issues.push(ValidationIssue::NegativeInitialDensity {
                    species: i,
                    x,
                    value: r,
                });
            }
        }
    }
    for (end, bc) in [("left", &model.left), ("right", &model.right)] {
        if !bc.phi_b.is_finite() {
            issues.push(ValidationIssue::NonFinite {
                what: format!("{end} boundary datum"),
                x: if end == "left" { grid.a() } else { grid.b() },
            });
        }
        if bc.kind == BoundaryKind::Robin && !(bc.beta > 0.0 && bc.beta.is_finite()) {
            issues.push(ValidationIssue::BadRobinBeta { end, beta: bc.beta });
        }
    }

    let mut compatibility_residual = None;
    if model.pure_neumann() && issues.is_empty() {
        let sm = sample(model, grid);
        let charges: Vec<f64> = model.species.iter().map(|s| s.z).collect();
        let (res, tol) = neumann_compatibility(grid.h(), &sm.f_center, &charges, &sm.rho0, &model.left, &model.right);
        compatibility_residual = Some(res);
        if res > tol {
            issues.push(ValidationIssue::NeumannIncompatible {
                residual: res,
                tolerance: tol,
            });
        }
    }
    ValidationReport {
        issues,
        compatibility_residual,
    }
}

/// Model coefficients evaluated on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledModel {
    /// Permittivity at faces `x_{1/2}..x_{N+1/2}`.
    pub eps_face: Vec<f64>,
    pub eps_center: Vec<f64>,
    pub f_center: Vec<f64>,
    /// Per species, diffusion at centers.
    pub d_center: Vec<Vec<f64>>,
    /// Per species, initial density at centers.
    pub rho0: Vec<Vec<f64>>,
    pub charges: Vec<f64>,
    pub left: BoundaryEnd,
    pub right: BoundaryEnd,
}

impl SampledModel {
    pub fn species_count(&self) -> usize {
        self.charges.len()
    }

    pub fn n(&self) -> usize {
        self.eps_center.len()
    }

    pub fn pure_neumann(&self) -> bool {
        self.left.kind == BoundaryKind::Neumann && self.right.kind == BoundaryKind::Neumann
    }

    /// Raise every initial density below `delta` to `delta`.
    pub fn floor_initial(&mut self, delta: f64) {
        for rho in &mut self.rho0 {
            for r in rho.iter_mut() {
                if *r < delta {
                    *r = delta;
                }
            }
        }
    }

    /// Minimum initial density over all species and cells.
    pub fn min_initial_density(&self) -> f64 {
        self.rho0.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Pointwise evaluation of the model coefficients on `grid`. Indicator-type
/// data are sampled at cell centers without averaging.
pub fn sample(model: &PnpModel, grid: &Grid1D) -> SampledModel {
    let centers = grid.centers();
    SampledModel {
        eps_face: grid.faces().iter().map(|&x| model.epsilon.eval(x)).collect(),
        eps_center: centers.iter().map(|&x| model.epsilon.eval(x)).collect(),
        f_center: centers.iter().map(|&x| model.fixed_charge.eval(x)).collect(),
        d_center: model
            .species
            .iter()
            .map(|s| centers.iter().map(|&x| s.diffusion.eval(x)).collect())
            .collect(),
        rho0: model
            .species
            .iter()
            .map(|s| centers.iter().map(|&x| s.rho_in.eval(x)).collect())
            .collect(),
        charges: model.species.iter().map(|s| s.z).collect(),
        left: model.left,
        right: model.right,
    }
}
