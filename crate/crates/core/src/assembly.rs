//! Linear equality constraints `A u = b` of one minimizing-movement step.
//!
//! The unknown `u = (rho, m, phi)` is flattened as
//!
//! ```text
//! [ rho_{1,1..N} | ... | rho_{s,1..N} | m_{1,3/2..N-1/2} | ... | m_{s,..} | phi_0..phi_{N+1} ]
//! ```
//!
//! for a total of `s(2N - 1) + N + 2` entries. The rows of `A` are the `sN`
//! conservative transport equations followed by the `N + 2` rows of the
//! ghost-point Poisson system.

use std::ops::Range;

use crate::error::{PnpError, Result};
use crate::mesh::Grid1D;
use crate::model::{BoundaryEnd, SampledModel};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub species: usize,
    pub cells: usize,
}

impl StateLayout {
    pub fn new(species: usize, cells: usize) -> Self {
        StateLayout { species, cells }
    }

    pub fn dim(&self) -> usize {
        self.species * (2 * self.cells - 1) + self.cells + 2
    }

    /// Index of `rho_{i,j}`, `j` zero-based over cells.
    pub fn rho(&self, i: usize, j: usize) -> usize {
        i * self.cells + j
    }

    pub fn rho_range(&self, i: usize) -> Range<usize> {
        i * self.cells..(i + 1) * self.cells
    }

    pub fn rho_block(&self) -> Range<usize> {
        0..self.species * self.cells
    }

    /// Index of the momentum on interior face `k + 1/2`, `k = 1..N-1`.
    pub fn m(&self, i: usize, k: usize) -> usize {
        debug_assert!(k >= 1 && k < self.cells);
        self.species * self.cells + i * (self.cells - 1) + (k - 1)
    }

    pub fn m_range(&self, i: usize) -> Range<usize> {
        let start = self.species * self.cells + i * (self.cells - 1);
        start..start + self.cells - 1
    }

    /// Index of `phi_j`, `j = 0..N+1` (ghosts at both ends).
    pub fn phi(&self, j: usize) -> usize {
        self.species * (2 * self.cells - 1) + j
    }

    pub fn phi_range(&self) -> Range<usize> {
        let start = self.phi(0);
        start..start + self.cells + 2
    }
}

/// A point in the unknown space together with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    layout: StateLayout,
    data: Vec<f64>,
}

impl State {
    pub fn zeros(layout: StateLayout) -> Self {
        State {
            layout,
            data: vec![0.0; layout.dim()],
        }
    }

    pub fn from_vec(layout: StateLayout, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.dim() {
            return Err(PnpError::LengthMismatch {
                expected: layout.dim(),
                got: data.len(),
            });
        }
        Ok(State { layout, data })
    }

    pub fn from_parts(layout: StateLayout, rho: &[Vec<f64>], m: &[Vec<f64>], phi: &[f64]) -> Result<Self> {
        let mut s = State::zeros(layout);
        if rho.len() != layout.species || m.len() != layout.species {
            return Err(PnpError::LengthMismatch {
                expected: layout.species,
                got: rho.len().min(m.len()),
            });
        }
        for i in 0..layout.species {
            copy_checked(&rho[i], s.rho_mut(i))?;
            copy_checked(&m[i], s.m_mut(i))?;
        }
        copy_checked(phi, s.phi_mut())?;
        Ok(s)
    }

    pub fn layout(&self) -> StateLayout {
        self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn rho(&self, i: usize) -> &[f64] {
        &self.data[self.layout.rho_range(i)]
    }

    pub fn rho_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.layout.rho_range(i);
        &mut self.data[r]
    }

    pub fn m(&self, i: usize) -> &[f64] {
        &self.data[self.layout.m_range(i)]
    }

    pub fn m_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.layout.m_range(i);
        &mut self.data[r]
    }

    pub fn phi(&self) -> &[f64] {
        &self.data[self.layout.phi_range()]
    }

    pub fn phi_mut(&mut self) -> &mut [f64] {
        let r = self.layout.phi_range();
        &mut self.data[r]
    }

    /// All densities as one slice, species-major.
    pub fn rho_all(&self) -> &[f64] {
        &self.data[self.layout.rho_block()]
    }

    pub fn densities(&self) -> Vec<Vec<f64>> {
        (0..self.layout.species).map(|i| self.rho(i).to_vec()).collect()
    }

    pub fn min_density(&self) -> f64 {
        self.rho_all().iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn copy_checked(src: &[f64], dst: &mut [f64]) -> Result<()> {
    if src.len() != dst.len() {
        return Err(PnpError::LengthMismatch {
            expected: dst.len(),
            got: src.len(),
        });
    }
    dst.copy_from_slice(src);
    Ok(())
}

/// The `N + 2` rows of the ghost-point Poisson system, kept in tridiagonal
/// form in `phi` plus the charge coupling of the interior rows.
///
/// Row 0 and row `N + 1` are the boundary rows
/// `(alpha h + 2 beta eps) phi_0 + (alpha h - 2 beta eps) phi_1 = 2 h phi_b`
/// (mirrored on the right), rows `1..=N` are
/// `-d_h(eps D_h phi)_j - sum_i z_i rho_{i,j} = f_j`.
///
/// With Neumann data at both ends the right boundary row is implied by the
/// others (given compatible data) and is replaced by the gauge row
/// `h sum_{j=1..N} phi_j = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonRows {
    cells: usize,
    h: f64,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,
    charges: Vec<f64>,
    gauge: bool,
    left: BoundaryEnd,
    right: BoundaryEnd,
    eps_left: f64,
    eps_right: f64,
}

impl PoissonRows {
    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn has_gauge(&self) -> bool {
        self.gauge
    }

    /// Constant part of the right-hand side, one entry per row.
    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn charges(&self) -> &[f64] {
        &self.charges
    }

    /// `phi` coefficients of row `r` as `(column, value)` over `0..N+2`.
    pub fn phi_entries(&self, r: usize) -> Vec<(usize, f64)> {
        let n = self.cells;
        if self.gauge && r == n + 1 {
            return (1..=n).map(|j| (j, self.h)).collect();
        }
        let mut e = Vec::with_capacity(3);
        if r > 0 && self.lower[r] != 0.0 {
            e.push((r - 1, self.lower[r]));
        }
        e.push((r, self.diag[r]));
        if r < n + 1 && self.upper[r] != 0.0 {
            e.push((r + 1, self.upper[r]));
        }
        e
    }

    /// Residual of the original right boundary row, which the gauge row
    /// stands in for. Zero when no gauge is used.
    pub fn right_boundary_residual(&self, phi: &[f64]) -> f64 {
        if !self.gauge {
            return 0.0;
        }
        let (row_n, row_n1, rhs) = boundary_row(&self.right, self.eps_right, self.h);
        row_n * phi[self.cells] + row_n1 * phi[self.cells + 1] - rhs
    }

    /// Residuals of every row for the given densities and potential.
    pub fn residuals(&self, rho: &[Vec<f64>], phi: &[f64]) -> Vec<f64> {
        (0..self.cells + 2)
            .map(|r| {
                let mut v: f64 = self.phi_entries(r).iter().map(|&(c, a)| a * phi[c]).sum();
                if r >= 1 && r <= self.cells {
                    for (z, rh) in self.charges.iter().zip(rho) {
                        v -= z * rh[r - 1];
                    }
                }
                v - self.rhs[r]
            })
            .collect()
    }

    /// Magnitude of the largest coefficient in row `r`, used to scale
    /// residual tolerances.
    pub fn row_scale(&self, r: usize) -> f64 {
        let mut s = self.phi_entries(r).iter().fold(0.0f64, |m, &(_, v)| m.max(v.abs()));
        if r >= 1 && r <= self.cells {
            s = self.charges.iter().fold(s, |m, z| m.max(z.abs()));
        }
        s
    }
}

// (coefficient of the adjacent interior value, coefficient of the ghost, rhs)
fn boundary_row(bc: &BoundaryEnd, eps: f64, h: f64) -> (f64, f64, f64) {
    let alpha = bc.alpha();
    let beta = bc.beta_eff();
    (
        alpha * h - 2.0 * beta * eps,
        alpha * h + 2.0 * beta * eps,
        2.0 * h * bc.phi_b,
    )
}

pub fn assemble_poisson_rows(sm: &SampledModel, grid: &Grid1D) -> PoissonRows {
    let n = grid.n();
    let h = grid.h();
    let h2 = h * h;
    let mut lower = vec![0.0; n + 2];
    let mut diag = vec![0.0; n + 2];
    let mut upper = vec![0.0; n + 2];
    let mut rhs = vec![0.0; n + 2];

    let eps_left = sm.eps_face[0];
    let eps_right = sm.eps_face[n];
    let (inner, ghost, b) = boundary_row(&sm.left, eps_left, h);
    diag[0] = ghost;
    upper[0] = inner;
    rhs[0] = b;
    for j in 1..=n {
        let em = sm.eps_face[j - 1];
        let ep = sm.eps_face[j];
        lower[j] = -em / h2;
        diag[j] = (em + ep) / h2;
        upper[j] = -ep / h2;
        rhs[j] = sm.f_center[j - 1];
    }
    let gauge = sm.pure_neumann();
    if gauge {
        rhs[n + 1] = 0.0;
    } else {
        let (inner, ghost, b) = boundary_row(&sm.right, eps_right, h);
        lower[n + 1] = inner;
        diag[n + 1] = ghost;
        rhs[n + 1] = b;
    }
    PoissonRows {
        cells: n,
        h,
        lower,
        diag,
        upper,
        rhs,
        charges: sm.charges.clone(),
        gauge,
        left: sm.left,
        right: sm.right,
        eps_left,
        eps_right,
    }
}

/// Thomas algorithm on the `phi` block. Fails on a vanishing pivot.
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let scale = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut beta = diag[0];
    for i in 0..n {
        if i > 0 {
            beta = diag[i] - lower[i] * c[i - 1];
            rhs[i] -= lower[i] * rhs[i - 1];
        }
        if beta.abs() <= 1e-14 * scale || !beta.is_finite() {
            return Err(PnpError::Singular(format!(
                "Poisson block has a vanishing pivot at row {i}"
            )));
        }
        c[i] = if i + 1 < n { upper[i] / beta } else { 0.0 };
        rhs[i] /= beta;
    }
    for i in (0..n - 1).rev() {
        let next = rhs[i + 1];
        rhs[i] -= c[i] * next;
    }
    Ok(())
}

/// Solve the Poisson rows for `phi` given densities.
///
/// In the gauge case the right boundary row is swapped for `phi_{N+1} = 0`,
/// which keeps the system tridiagonal; the constant shift that enforces
/// `h sum phi_j = 0` is applied afterwards.
pub fn solve_poisson(rows: &PoissonRows, rho: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = rows.cells;
    if rho.len() != rows.charges.len() {
        return Err(PnpError::LengthMismatch {
            expected: rows.charges.len(),
            got: rho.len(),
        });
    }
    for r in rho {
        if r.len() != n {
            return Err(PnpError::LengthMismatch {
                expected: n,
                got: r.len(),
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(PnpError::Domain("non-finite density in Poisson solve".into()));
        }
    }
    let mut x = rows.rhs.clone();
    for j in 1..=n {
        for (z, r) in rows.charges.iter().zip(rho) {
            x[j] += z * r[j - 1];
        }
    }
    let mut lower = rows.lower.clone();
    let mut diag = rows.diag.clone();
    if rows.gauge {
        lower[n + 1] = 0.0;
        diag[n + 1] = 1.0;
        x[n + 1] = 0.0;
    }
    thomas(&lower, &diag, &rows.upper, &mut x)?;
    if rows.gauge {
        let mean = x[1..=n].iter().sum::<f64>() / n as f64;
        x.iter_mut().for_each(|v| *v -= mean);
    }
    Ok(x)
}

/// Transport rows `rho_{i,j} + (m_{i,j+1/2} - m_{i,j-1/2}) / h = rho^n_{i,j}`
/// over the full state columns.
pub fn assemble_transport_rows(grid: &Grid1D, rho_prev: &[Vec<f64>]) -> (CsrMatrix, Vec<f64>) {
    let n = grid.n();
    let s = rho_prev.len();
    let layout = StateLayout::new(s, n);
    let inv_h = 1.0 / grid.h();
    let mut a = CsrMatrix::new(layout.dim());
    let mut b = Vec::with_capacity(s * n);
    for (i, prev) in rho_prev.iter().enumerate() {
        for j in 0..n {
            let mut row = vec![(layout.rho(i, j), 1.0)];
            // face j + 1/2 in one-based cell numbering is k = j + 1
            if j + 1 < n {
                row.push((layout.m(i, j + 1), inv_h));
            }
            if j > 0 {
                row.push((layout.m(i, j), -inv_h));
            }
            a.push_row(&row);
            b.push(prev[j]);
        }
    }
    (a, b)
}

fn poisson_csr(rows: &PoissonRows, layout: StateLayout) -> CsrMatrix {
    let mut a = CsrMatrix::new(layout.dim());
    for r in 0..rows.cells + 2 {
        let mut entries: Vec<(usize, f64)> = rows
            .phi_entries(r)
            .into_iter()
            .map(|(c, v)| (layout.phi(c), v))
            .collect();
        if r >= 1 && r <= rows.cells && !(rows.gauge && r == rows.cells + 1) {
            for (i, z) in rows.charges.iter().enumerate() {
                entries.push((layout.rho(i, r - 1), -z));
            }
        }
        a.push_row(&entries);
    }
    a
}

/// Stacked constraint system of one step. `A` depends only on the grid and
/// coefficients; the anchor densities enter through `b` alone.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    layout: StateLayout,
    a: CsrMatrix,
    b: Vec<f64>,
    transport: Range<usize>,
    poisson: Range<usize>,
    poisson_rows: PoissonRows,
    delta: f64,
    rho_prev: Vec<Vec<f64>>,
}

pub fn build_constraint_system(
    sm: &SampledModel,
    grid: &Grid1D,
    rho_prev: &[Vec<f64>],
    delta: f64,
) -> Result<ConstraintSystem> {
    let s = sm.species_count();
    let n = grid.n();
    if rho_prev.len() != s {
        return Err(PnpError::LengthMismatch {
            expected: s,
            got: rho_prev.len(),
        });
    }
    for r in rho_prev {
        if r.len() != n {
            return Err(PnpError::LengthMismatch {
                expected: n,
                got: r.len(),
            });
        }
    }
    if !(delta > 0.0) {
        return Err(PnpError::Config(format!("density floor must be positive, got {delta}")));
    }
    let layout = StateLayout::new(s, n);
    let poisson_rows = assemble_poisson_rows(sm, grid);
    // A has full row rank iff the phi block is nonsingular: the rho columns
    // already carry an identity under the transport rows.
    {
        let mut probe = vec![1.0; n + 2];
        let mut lower = poisson_rows.lower.clone();
        let mut diag = poisson_rows.diag.clone();
        if poisson_rows.gauge {
            lower[n + 1] = 0.0;
            diag[n + 1] = 1.0;
        }
        thomas(&lower, &diag, &poisson_rows.upper, &mut probe)
            .map_err(|e| PnpError::Singular(format!("constraint matrix is rank deficient: {e}")))?;
    }
    let (ta, tb) = assemble_transport_rows(grid, rho_prev);
    let pa = poisson_csr(&poisson_rows, layout);
    let a = ta.vstack(&pa);
    let mut b = tb;
    b.extend_from_slice(&poisson_rows.rhs);
    Ok(ConstraintSystem {
        layout,
        a,
        b,
        transport: 0..s * n,
        poisson: s * n..s * n + n + 2,
        poisson_rows,
        delta,
        rho_prev: rho_prev.to_vec(),
    })
}

impl ConstraintSystem {
    pub fn layout(&self) -> StateLayout {
        self.layout
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.a
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn transport_rows(&self) -> Range<usize> {
        self.transport.clone()
    }

    pub fn poisson_row_range(&self) -> Range<usize> {
        self.poisson.clone()
    }

    pub fn poisson(&self) -> &PoissonRows {
        &self.poisson_rows
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn rho_prev(&self) -> &[Vec<f64>] {
        &self.rho_prev
    }

    /// Move the anchor to new densities; only `b` changes.
    pub fn set_anchor(&mut self, rho_prev: &[Vec<f64>]) -> Result<()> {
        let n = self.layout.cells;
        if rho_prev.len() != self.layout.species || rho_prev.iter().any(|r| r.len() != n) {
            return Err(PnpError::LengthMismatch {
                expected: self.layout.species * n,
                got: rho_prev.iter().map(|r| r.len()).sum(),
            });
        }
        for (i, r) in rho_prev.iter().enumerate() {
            self.b[i * n..(i + 1) * n].copy_from_slice(r);
        }
        self.rho_prev = rho_prev.to_vec();
        Ok(())
    }

    /// Row order that keeps `A A^T` banded: cell by cell, transport rows of
    /// every species followed by the Poisson row of that cell. The gauge
    /// row, if any, is left out and ends up in the dense border.
    pub fn band_order(&self) -> Vec<usize> {
        let (s, n) = (self.layout.species, self.layout.cells);
        let p0 = self.poisson.start;
        let mut order = Vec::with_capacity(s * n + n + 2);
        order.push(p0);
        for j in 0..n {
            for i in 0..s {
                order.push(self.transport.start + i * n + j);
            }
            order.push(p0 + j + 1);
        }
        if !self.poisson_rows.gauge {
            order.push(p0 + n + 1);
        }
        order
    }

    pub fn residual(&self, u: &[f64]) -> Vec<f64> {
        let mut r = self.a.mul_vec(u);
        for (ri, bi) in r.iter_mut().zip(&self.b) {
            *ri -= bi;
        }
        r
    }

    /// `||A u - b||_2`
    pub fn residual_norm(&self, u: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (r, bi) in self.b.iter().enumerate() {
            let v = self.a.row_dot(r, u) - bi;
            acc += v * v;
        }
        acc.sqrt()
    }

    /// Feasibility tolerance `1e-8 (1 + ||b||)`.
    pub fn feasibility_tolerance(&self) -> f64 {
        1e-8 * (1.0 + self.b.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    /// Warm start `(rho^n, 0, phi(rho^n))`. Requires strictly positive
    /// anchor densities.
    pub fn warm_start(&self) -> Result<State> {
        if self.rho_prev.iter().flatten().any(|&r| !(r > 0.0)) {
            return Err(PnpError::Domain("anchor densities must be positive".into()));
        }
        let phi = solve_poisson(&self.poisson_rows, &self.rho_prev)?;
        let mut u = State::zeros(self.layout);
        for (i, r) in self.rho_prev.iter().enumerate() {
            u.rho_mut(i).copy_from_slice(r);
        }
        u.phi_mut().copy_from_slice(&phi);
        Ok(u)
    }
}

/// Momenta that carry `rho_prev` to `rho` under the transport rows:
/// `m_{i,k+1/2} = -h sum_{l<=k} (rho_{i,l} - rho^n_{i,l})`.
///
/// This is the sign and scaling implied by `rho - rho^n + d_h m = 0`.
pub fn recover_momentum(rho: &[Vec<f64>], rho_prev: &[Vec<f64>], grid: &Grid1D) -> Result<Vec<Vec<f64>>> {
    let n = grid.n();
    let h = grid.h();
    if rho.len() != rho_prev.len() {
        return Err(PnpError::LengthMismatch {
            expected: rho_prev.len(),
            got: rho.len(),
        });
    }
    let mut out = Vec::with_capacity(rho.len());
    for (i, (r, p)) in rho.iter().zip(rho_prev).enumerate() {
        if r.len() != n || p.len() != n {
            return Err(PnpError::LengthMismatch {
                expected: n,
                got: r.len().min(p.len()),
            });
        }
        let defect: f64 = h * r.iter().zip(p).map(|(a, b)| a - b).sum::<f64>();
        let scale = 1.0 + h * p.iter().map(|v| v.abs()).sum::<f64>();
        if defect.abs() > 1e-10 * scale {
            return Err(PnpError::MassMismatch { species: i, defect });
        }
        let mut m = Vec::with_capacity(n - 1);
        let mut acc = 0.0;
        for j in 0..n - 1 {
            acc += r[j] - p[j];
            m.push(-h * acc);
        }
        out.push(m);
    }
    Ok(out)
}

/// Feasible warm start for one step: `rho = rho^n`, `m = 0`,
/// `phi = solve_poisson(rho^n)`.
pub fn feasible_start(sm: &SampledModel, grid: &Grid1D, rho_prev: &[Vec<f64>], delta: f64) -> Result<State> {
    if let Some(bad) = rho_prev.iter().flatten().find(|&&r| !(r >= delta)) {
        return Err(PnpError::Domain(format!(
            "anchor density {bad} is below the floor {delta}"
        )));
    }
    build_constraint_system(sm, grid, rho_prev, delta)?.warm_start()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::model::{sample, PnpModel, SpeciesSpec};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    fn model(charges: &[f64], rho: &str, left: BoundaryEnd, right: BoundaryEnd) -> PnpModel {
        PnpModel {
            species: charges
                .iter()
                .map(|&z| SpeciesSpec {
                    z,
                    diffusion: Expr::constant(1.0),
                    rho_in: Expr::parse(rho).unwrap(),
                })
                .collect(),
            epsilon: Expr::constant(1.0),
            fixed_charge: Expr::constant(0.0),
            left,
            right,
        }
    }

    #[test]
    fn layout_dimensions() {
        assert_eq!(StateLayout::new(1, 4).dim(), 13);
        assert_eq!(StateLayout::new(2, 40).dim(), 200);
        let l = StateLayout::new(2, 4);
        assert_eq!(l.rho(1, 0), 4);
        assert_eq!(l.m(0, 1), 8);
        assert_eq!(l.m(1, 3), 13);
        assert_eq!(l.phi(0), 14);
        assert_eq!(l.phi(5), 19);
        assert_eq!(l.dim(), 20);
    }

    #[test]
    fn zero_data_gives_zero_potential() {
        let m = model(
            &[1.0, -1.0],
            "1",
            BoundaryEnd::dirichlet(0.0),
            BoundaryEnd::dirichlet(0.0),
        );
        let g = Grid1D::new(0.0, 1.0, 8).unwrap();
        let sm = sample(&m, &g);
        let rows = assemble_poisson_rows(&sm, &g);
        let phi = solve_poisson(&rows, &sm.rho0).unwrap();
        assert!(phi.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn linear_potential_is_exact() {
        let m = model(
            &[1.0, -1.0],
            "1",
            BoundaryEnd::dirichlet(-1.0),
            BoundaryEnd::dirichlet(1.0),
        );
        let g = Grid1D::new(-1.0, 1.0, 10).unwrap();
        let sm = sample(&m, &g);
        let rows = assemble_poisson_rows(&sm, &g);
        let phi = solve_poisson(&rows, &sm.rho0).unwrap();
        for (j, &x) in g.centers().iter().enumerate() {
            assert_abs_diff_eq!(phi[j + 1], x, epsilon = 1e-13);
        }
        assert_abs_diff_eq!(phi[0], -1.0 - g.h() / 2.0, epsilon = 1e-13);
        assert_abs_diff_eq!(0.5 * (phi[0] + phi[1]), -1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(0.5 * (phi[10] + phi[11]), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn small_system_matches_dense_lu() {
        let m = model(&[1.0], "1", BoundaryEnd::dirichlet(0.0), BoundaryEnd::dirichlet(0.0));
        let g = Grid1D::new(0.0, 1.0, 4).unwrap();
        let sm = sample(&m, &g);
        let rho = vec![vec![1.0, 2.0, 2.0, 1.0]];
        let rows = assemble_poisson_rows(&sm, &g);
        let phi = solve_poisson(&rows, &rho).unwrap();

        // independent dense 6x6 system written out from the stencil
        let h = 0.25;
        let k = 1.0 / (h * h);
        let mut a = DMatrix::<f64>::zeros(6, 6);
        let mut b = DVector::<f64>::zeros(6);
        a[(0, 0)] = h;
        a[(0, 1)] = h;
        for j in 1..=4 {
            a[(j, j - 1)] = -k;
            a[(j, j)] = 2.0 * k;
            a[(j, j + 1)] = -k;
            b[j] = rho[0][j - 1];
        }
        a[(5, 4)] = h;
        a[(5, 5)] = h;
        let dense = a.lu().solve(&b).unwrap();
        for j in 0..6 {
            assert_abs_diff_eq!(phi[j], dense[j], epsilon = 1e-12);
        }
        // row residuals
        for (r, res) in rows.residuals(&rho, &phi).iter().enumerate() {
            assert!(res.abs() <= 1e-12 * rows.row_scale(r), "row {r}: {res}");
        }
    }

    #[test]
    fn robin_rows_match_printed_form() {
        let m = model(
            &[1.0],
            "1",
            BoundaryEnd::robin(0.5, 2.0),
            BoundaryEnd::robin(0.25, -1.0),
        );
        let g = Grid1D::new(0.0, 1.0, 4).unwrap();
        let sm = sample(&m, &g);
        let rows = assemble_poisson_rows(&sm, &g);
        let h = 0.25;
        assert_eq!(rows.phi_entries(0), vec![(0, h + 1.0), (1, h - 1.0)]);
        assert_eq!(rows.rhs()[0], 2.0 * h * 2.0);
        assert_eq!(rows.phi_entries(5), vec![(4, h - 0.5), (5, h + 0.5)]);
        assert_eq!(rows.rhs()[5], -2.0 * h);
    }

    #[test]
    fn transport_stencil_three_cells() {
        let g = Grid1D::new(0.0, 1.5, 3).unwrap();
        let prev = vec![vec![1.0, 2.0, 3.0]];
        let (a, b) = assemble_transport_rows(&g, &prev);
        let d = a.to_dense();
        let l = StateLayout::new(1, 3);
        let inv_h = 2.0;
        assert_eq!(d[(0, l.rho(0, 0))], 1.0);
        assert_eq!(d[(0, l.m(0, 1))], inv_h);
        assert_eq!(d[(1, l.m(0, 1))], -inv_h);
        assert_eq!(d[(1, l.m(0, 2))], inv_h);
        assert_eq!(d[(2, l.m(0, 2))], -inv_h);
        assert_eq!(a.nnz(), 7);
        assert_eq!(b, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn constraint_dimensions() {
        let m = model(&[1.0], "1", BoundaryEnd::dirichlet(0.0), BoundaryEnd::dirichlet(0.0));
        let g = Grid1D::new(0.0, 1.0, 4).unwrap();
        let sm = sample(&m, &g);
        let cs = build_constraint_system(&sm, &g, &sm.rho0, 0.01).unwrap();
        assert_eq!(cs.matrix().nrows(), 10);
        assert_eq!(cs.matrix().ncols(), 13);

        let m = model(
            &[1.0, -1.0],
            "1",
            BoundaryEnd::dirichlet(0.0),
            BoundaryEnd::dirichlet(0.0),
        );
        let g = Grid1D::new(-1.0, 1.0, 40).unwrap();
        let sm = sample(&m, &g);
        let cs = build_constraint_system(&sm, &g, &sm.rho0, 0.01).unwrap();
        assert_eq!(cs.matrix().nrows(), 122);
        assert_eq!(cs.matrix().ncols(), 200);
        assert_eq!(cs.band_order().len(), 122);
    }

    #[test]
    fn momentum_recovery_examples() {
        let g = Grid1D::new(0.0, 1.0, 2).unwrap();
        let prev = vec![vec![1.0, 1.0]];
        let m = recover_momentum(&[vec![1.3, 0.7]], &prev, &g).unwrap();
        assert_abs_diff_eq!(m[0][0], -0.5 * 0.3, epsilon = 1e-15);
        let m0 = recover_momentum(&prev, &prev, &g).unwrap();
        assert_eq!(m0, vec![vec![0.0]]);
        assert!(matches!(
            recover_momentum(&[vec![1.3, 0.8]], &prev, &g),
            Err(PnpError::MassMismatch { species: 0, .. })
        ));
    }

    #[test]
    fn warm_start_is_feasible() {
        let m = model(
            &[1.0, -1.0],
            "2 - x^2",
            BoundaryEnd::dirichlet(-1.0),
            BoundaryEnd::dirichlet(1.0),
        );
        let g = Grid1D::new(-1.0, 1.0, 40).unwrap();
        let sm = sample(&m, &g);
        let u = feasible_start(&sm, &g, &sm.rho0, 0.0025).unwrap();
        let cs = build_constraint_system(&sm, &g, &sm.rho0, 0.0025).unwrap();
        let scale = 1.0 + cs.rhs().iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(cs.residual_norm(u.as_slice()) <= 1e-12 * scale * 100.0);
        assert!(u.m(0).iter().all(|&v| v == 0.0));
        assert!(feasible_start(&sm, &g, &sm.rho0, 5.0).is_err());
    }

    #[test]
    fn pure_neumann_uses_gauge() {
        let mut m = model(&[1.0, -1.0], "1", BoundaryEnd::neumann(0.5), BoundaryEnd::neumann(-0.5));
        m.species[0].rho_in = Expr::parse("1 + 0.5*cos(pi*x)").unwrap();
        let g = Grid1D::new(0.0, 1.0, 16).unwrap();
        let sm = sample(&m, &g);
        let rows = assemble_poisson_rows(&sm, &g);
        assert!(rows.has_gauge());
        let phi = solve_poisson(&rows, &sm.rho0).unwrap();
        let mean: f64 = g.h() * phi[1..=16].iter().sum::<f64>();
        assert!(mean.abs() < 1e-13);
        for (r, res) in rows.residuals(&sm.rho0, &phi).iter().enumerate() {
            assert!(res.abs() <= 1e-11 * (1.0 + rows.row_scale(r)), "row {r}: {res}");
        }
        assert!(rows.right_boundary_residual(&phi).abs() < 1e-11);
    }
}
