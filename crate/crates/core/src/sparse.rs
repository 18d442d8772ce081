//! Minimal compressed-row sparse matrix.

use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(ncols: usize) -> Self {
        CsrMatrix {
            ncols,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Append a row. Entries with equal columns are summed; zeros are kept
    /// out of the pattern.
    pub fn push_row(&mut self, entries: &[(usize, f64)]) {
        let mut sorted: Vec<(usize, f64)> = entries.to_vec();
        sorted.sort_by_key(|e| e.0);
        let start = self.indices.len();
        for (c, v) in sorted {
            assert!(c < self.ncols, "column {c} out of range {}", self.ncols);
            if self.indices.len() > start && *self.indices.last().unwrap() == c {
                *self.values.last_mut().unwrap() += v;
            } else {
                self.indices.push(c);
                self.values.push(v);
            }
        }
        // drop explicit zeros
        let mut w = start;
        for r in start..self.indices.len() {
            if self.values[r] != 0.0 {
                self.indices[w] = self.indices[r];
                self.values[w] = self.values[r];
                w += 1;
            }
        }
        self.indices.truncate(w);
        self.values.truncate(w);
        self.indptr.push(w);
    }

    pub fn nrows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        self.row(r).map(|(c, v)| v * x[c]).sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows()];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        for (r, out) in y.iter_mut().enumerate() {
            *out = self.row_dot(r, x);
        }
    }

    /// `y = A^T x`
    pub fn tr_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        self.tr_mul_vec_into(x, &mut y);
        y
    }

    pub fn tr_mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (r, &xr) in x.iter().enumerate() {
            for (c, v) in self.row(r) {
                y[c] += v * xr;
            }
        }
    }

    /// Stack `self` on top of `other`.
    pub fn vstack(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.ncols);
        let mut out = self.clone();
        let offset = out.indices.len();
        out.indices.extend_from_slice(&other.indices);
        out.values.extend_from_slice(&other.values);
        out.indptr.extend(other.indptr[1..].iter().map(|p| p + offset));
        out
    }

    pub fn row_norm(&self, r: usize) -> f64 {
        self.row(r).map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols);
        for r in 0..self.nrows() {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_match_dense() {
        let mut a = CsrMatrix::new(3);
        a.push_row(&[(0, 1.0), (2, 2.0)]);
        a.push_row(&[(1, -1.0), (1, 4.0), (0, 0.0)]);
        assert_eq!(a.nnz(), 3);
        let x = [1.0, 2.0, 3.0];
        assert_eq!(a.mul_vec(&x), vec![7.0, 6.0]);
        assert_eq!(a.tr_mul_vec(&[1.0, 2.0]), vec![1.0, 6.0, 2.0]);
        let d = a.to_dense();
        assert_eq!(d[(1, 1)], 3.0);

        let mut b = CsrMatrix::new(3);
        b.push_row(&[(2, 5.0)]);
        let s = a.vstack(&b);
        assert_eq!(s.nrows(), 3);
        assert_eq!(s.mul_vec(&x), vec![7.0, 6.0, 15.0]);
    }
}
