//! Cholesky factorization of symmetric positive definite band matrices,
//! with an optional dense border (arrowhead structure).
//!
//! Used for the Gram matrix `A A^T` of the constraint system: with rows
//! ordered cell by cell its bandwidth does not grow with `N`. The only dense
//! coupling is the mean-zero gauge row of a pure-Neumann problem, which goes
//! into the border and is eliminated through a Schur complement.

use std::collections::BTreeMap;

use crate::error::{PnpError, Result};
use crate::sparse::CsrMatrix;

/// Lower band Cholesky factor `L` with `L L^T = B`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    // row-major: l[i * (bw + 1) + k] holds L(i, i + k - bw)
    l: Vec<f64>,
}

impl BandedCholesky {
    /// Factor the `n x n` matrix whose lower band entries are given by
    /// `entry(i, j)` for `j <= i <= j + bw`.
    pub fn factor(n: usize, bw: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        let mut max_diag = 0.0f64;
        for i in 0..n {
            max_diag = max_diag.max(entry(i, i).abs());
        }
        let pivot_floor = max_diag * 1e-14 * n as f64;
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut s = entry(i, j);
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= l[i * w + k + bw - i] * l[j * w + k + bw - j];
                }
                if i == j {
                    if s <= pivot_floor || !s.is_finite() {
                        return Err(PnpError::Singular(format!(
                            "non-positive pivot {s:e} at row {i} of {n}"
                        )));
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + j + bw - i] = s / l[j * w + bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        debug_assert_eq!(x.len(), n);
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[i * w + k + bw - i] * x[k];
            }
            x[i] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..(i + bw + 1).min(n) {
                s -= self.l[k * w + i + bw - k] * x[k];
            }
            x[i] = s / self.l[i * w + bw];
        }
    }
}

/// Factorization of `[[B, C], [C^T, D]]` with `B` banded and `C` a few
/// dense columns.
#[derive(Debug, Clone)]
pub struct BorderedCholesky {
    band: BandedCholesky,
    // border columns of C, each of length band.dim()
    border: Vec<Vec<f64>>,
    // B^{-1} C
    w: Vec<Vec<f64>>,
    schur: Option<BandedCholesky>,
}

impl BorderedCholesky {
    pub fn dim(&self) -> usize {
        self.band.dim() + self.border.len()
    }

    pub fn bandwidth(&self) -> usize {
        self.band.bandwidth()
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let nb = self.band.dim();
        let k = self.border.len();
        let (head, tail) = x.split_at_mut(nb);
        self.band.solve_in_place(head);
        if k == 0 {
            return;
        }
        let mut y: Vec<f64> = (0..k).map(|c| tail[c] - dot(&self.border[c], head)).collect();
        self.schur.as_ref().unwrap().solve_in_place(&mut y);
        for (c, yc) in y.iter().enumerate() {
            for (h, wc) in head.iter_mut().zip(&self.w[c]) {
                *h -= wc * yc;
            }
        }
        tail.copy_from_slice(&y);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Factor the Gram matrix `M M^T` of a sparse matrix.
///
/// `order` lists the rows of `m` that form the banded block, in the order
/// that keeps the band narrow; every row not listed goes into the dense
/// border. Returned solves act on vectors indexed like the rows of `m`
/// through [`GramFactor::solve`].
#[derive(Debug, Clone)]
pub struct GramFactor {
    chol: BorderedCholesky,
    // position of each original row in the factored ordering
    position: Vec<usize>,
}

impl GramFactor {
    pub fn new(m: &CsrMatrix, order: &[usize]) -> Result<Self> {
        let nrows = m.nrows();
        let mut position = vec![usize::MAX; nrows];
        for (p, &r) in order.iter().enumerate() {
            if position[r] != usize::MAX {
                return Err(PnpError::Config(format!("row {r} listed twice in band order")));
            }
            position[r] = p;
        }
        let nb = order.len();
        let mut next = nb;
        for p in position.iter_mut() {
            if *p == usize::MAX {
                *p = next;
                next += 1;
            }
        }
        let k = nrows - nb;

        // column -> rows
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m.ncols()];
        for r in 0..nrows {
            for (c, v) in m.row(r) {
                cols[c].push((r, v));
            }
        }
        let mut gram: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for col in &cols {
            for &(r1, v1) in col {
                for &(r2, v2) in col {
                    let (p1, p2) = (position[r1], position[r2]);
                    if p1 >= p2 {
                        *gram.entry((p1, p2)).or_insert(0.0) += v1 * v2;
                    }
                }
            }
        }
        let mut bw = 0;
        for &(p1, p2) in gram.keys() {
            if p1 < nb {
                bw = bw.max(p1 - p2);
            }
        }
        let band = BandedCholesky::factor(nb, bw, |i, j| gram.get(&(i, j)).copied().unwrap_or(0.0))?;

        let mut border = vec![vec![0.0; nb]; k];
        let mut corner = vec![0.0; k * k];
        for (&(p1, p2), &v) in &gram {
            if p1 >= nb {
                if p2 >= nb {
                    corner[(p1 - nb) * k + (p2 - nb)] = v;
                    corner[(p2 - nb) * k + (p1 - nb)] = v;
                } else {
                    border[p1 - nb][p2] = v;
                }
            }
        }
        let w: Vec<Vec<f64>> = border
            .iter()
            .map(|c| {
                let mut x = c.clone();
                band.solve_in_place(&mut x);
                x
            })
            .collect();
        let schur = if k > 0 {
            let mut s = corner;
            for a in 0..k {
                for b in 0..k {
                    s[a * k + b] -= dot(&border[a], &w[b]);
                }
            }
            Some(BandedCholesky::factor(k, k - 1, |i, j| s[i * k + j])?)
        } else {
            None
        };
        Ok(GramFactor {
            chol: BorderedCholesky { band, border, w, schur },
            position,
        })
    }

    pub fn dim(&self) -> usize {
        self.position.len()
    }

    pub fn bandwidth(&self) -> usize {
        self.chol.bandwidth()
    }

    /// Solve `(M M^T) x = rhs` in the original row indexing; `scratch`
    /// must have length `dim()`.
    pub fn solve(&self, rhs: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        for (r, &p) in self.position.iter().enumerate() {
            scratch[p] = rhs[r];
        }
        self.chol.solve_in_place(scratch);
        for (r, &p) in self.position.iter().enumerate() {
            out[r] = scratch[p];
        }
    }
}
