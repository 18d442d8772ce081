//! Structure-preserving minimizing-movement solver for the 1D
//! Poisson–Nernst–Planck system.
//!
//! Each time step minimizes a discrete free energy plus a diffusion-weighted
//! transport cost over densities, face momenta and the potential, subject to
//! linear constraints: a conservative transport equation per species and a
//! ghost-point discretization of the Poisson equation. Mass conservation
//! follows from the constraints, positivity from the entropy barrier, and
//! energy dissipation from comparing the minimizer to the feasible warm start.
//!
//! Modules, bottom up:
//!
//! - [`mesh`]: cell-centered grid and the face divergence / average operators
//! - [`model`]: species, coefficients and boundary data, plus validation
//! - [`assembly`]: state layout, constraint rows, Poisson solve
//! - [`functional`]: objective, gradient and diagnostic energy
//! - [`optimizer`]: nullspace-projected gradient descent with backtracking
//! - [`driver`]: time loop, diagnostics, convergence study, reference oracle
//! - [`config`] and [`output`]: config files, presets and CSV output

// `!(x > 0.0)` is used on purpose so that NaN fails positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the stencils they implement.
#![allow(clippy::needless_range_loop)]

pub mod assembly;
pub mod banded;
pub mod config;
pub mod driver;
pub mod error;
pub mod expr;
pub mod functional;
pub mod mesh;
pub mod model;
pub mod optimizer;
pub mod output;
pub mod sparse;

pub use assembly::{ConstraintSystem, State, StateLayout};
pub use driver::{Diagnostics, RunConfig};
pub use error::{PnpError, Result};
pub use expr::Expr;
pub use mesh::Grid1D;
pub use model::{BoundaryEnd, BoundaryKind, PnpModel, SampledModel, SpeciesSpec};
pub use optimizer::PgParams;
