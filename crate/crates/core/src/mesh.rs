//! Uniform cell-centered 1D mesh.
//!
//! Densities and the potential live at cell centers `x_j = a + (j - 1/2) h`,
//! momenta at the interior faces `x_{j+1/2}`, `j = 1..N-1`. The boundary
//! fluxes `m_{1/2}` and `m_{N+1/2}` are identically zero and never stored.

use crate::error::{PnpError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    a: f64,
    b: f64,
    n: usize,
    h: f64,
    centers: Vec<f64>,
    faces: Vec<f64>,
}

impl Grid1D {
    pub fn new(a: f64, b: f64, n: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || b <= a {
            return Err(PnpError::Config(format!("domain [{a}, {b}] must satisfy b > a")));
        }
        if n < 2 {
            return Err(PnpError::Config(format!("need at least 2 cells, got {n}")));
        }
        let h = (b - a) / n as f64;
        let centers = (1..=n).map(|j| a + (j as f64 - 0.5) * h).collect();
        let mut faces: Vec<f64> = (0..=n).map(|j| a + j as f64 * h).collect();
        faces[n] = b;
        Ok(Grid1D {
            a,
            b,
            n,
            h,
            centers,
            faces,
        })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Number of cells.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Cell centers `x_1..x_N`.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Faces `x_{1/2}..x_{N+1/2}`, endpoints included.
    pub fn faces(&self) -> &[f64] {
        &self.faces
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }
}

fn check_faces(face_values: &[f64], n: usize) -> Result<()> {
    if face_values.len() + 1 != n {
        return Err(PnpError::LengthMismatch {
            expected: n.saturating_sub(1),
            got: face_values.len(),
        });
    }
    Ok(())
}

/// Discrete divergence `(d_h v)_j = (v_{j+1/2} - v_{j-1/2}) / h` of interior
/// face values, with zero end fluxes.
pub fn divergence_dh(face_values: &[f64], n: usize, h: f64) -> Result<Vec<f64>> {
    check_faces(face_values, n)?;
    let at = |k: usize| -> f64 {
        // k indexes faces 0..=n
        if k == 0 || k == n {
            0.0
        } else {
            face_values[k - 1]
        }
    };
    Ok((1..=n).map(|j| (at(j) - at(j - 1)) / h).collect())
}

/// Face average `v̂_j = (v_{j+1/2} + v_{j-1/2}) / 2` with zero end fluxes.
pub fn face_average(face_values: &[f64], n: usize) -> Result<Vec<f64>> {
    check_faces(face_values, n)?;
    let mut out = vec![0.0; n];
    face_average_into(face_values, &mut out);
    Ok(out)
}

/// Unchecked variant used on hot paths; `out.len()` sets `N`.
pub(crate) fn face_average_into(face_values: &[f64], out: &mut [f64]) {
    let n = out.len();
    debug_assert_eq!(face_values.len() + 1, n);
    for (j, o) in out.iter_mut().enumerate() {
        let left = if j == 0 { 0.0 } else { face_values[j - 1] };
        let right = if j + 1 == n { 0.0 } else { face_values[j] };
        *o = 0.5 * (left + right);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn unit_interval_four_cells() {
        let g = Grid1D::new(0.0, 1.0, 4).unwrap();
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.centers(), &[0.125, 0.375, 0.625, 0.875]);
        assert_eq!(g.faces()[0], 0.0);
        assert_eq!(g.faces()[4], 1.0);
    }

    #[test]
    fn symmetric_interval_forty_cells() {
        let g = Grid1D::new(-1.0, 1.0, 40).unwrap();
        assert_abs_diff_eq!(g.h(), 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(g.centers()[0], -0.975, epsilon = 1e-15);
        for w in g.centers().windows(2) {
            assert!(w[1] > w[0]);
            assert_abs_diff_eq!(w[1] - w[0], g.h(), epsilon = 1e-14);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(Grid1D::new(0.0, 1.0, 1), Err(PnpError::Config(_))));
        assert!(matches!(Grid1D::new(1.0, 1.0, 4), Err(PnpError::Config(_))));
        assert!(matches!(Grid1D::new(2.0, 1.0, 4), Err(PnpError::Config(_))));
    }

    #[test]
    fn divergence_examples() {
        assert_eq!(divergence_dh(&[0.0; 3], 4, 0.25).unwrap(), vec![0.0; 4]);
        assert_eq!(
            divergence_dh(&[1.0, 1.0, 1.0], 4, 0.5).unwrap(),
            vec![2.0, 0.0, 0.0, -2.0]
        );
        assert!(divergence_dh(&[1.0, 1.0], 4, 0.5).is_err());
    }

    #[test]
    fn average_examples() {
        assert_eq!(face_average(&[0.0; 3], 4).unwrap(), vec![0.0; 4]);
        assert_eq!(face_average(&[2.0, 4.0, 6.0], 4).unwrap(), vec![1.0, 3.0, 5.0, 3.0]);
        assert_eq!(face_average(&[7.0, 7.0], 3).unwrap(), vec![3.5, 7.0, 3.5]);
        assert!(face_average(&[1.0], 4).is_err());
    }

    proptest! {
        #[test]
        fn divergence_telescopes(v in prop::collection::vec(-10.0f64..10.0, 1..40), h in 0.01f64..1.0) {
            let n = v.len() + 1;
            let d = divergence_dh(&v, n, h).unwrap();
            let total: f64 = d.iter().map(|x| h * x).sum();
            prop_assert!(total.abs() <= 1e-12 * (1.0 + v.iter().map(|x| x.abs()).sum::<f64>()));
        }

        #[test]
        fn operators_are_linear(
            pair in (1usize..20).prop_flat_map(|k| (
                prop::collection::vec(-5.0f64..5.0, k),
                prop::collection::vec(-5.0f64..5.0, k),
            )),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let (u, v) = pair;
            let n = u.len() + 1;
            let h = 0.1;
            let comb: Vec<f64> = u.iter().zip(&v).map(|(x, y)| alpha * x + beta * y).collect();
            let du = divergence_dh(&u, n, h).unwrap();
            let dv = divergence_dh(&v, n, h).unwrap();
            let dc = divergence_dh(&comb, n, h).unwrap();
            let au = face_average(&u, n).unwrap();
            let av = face_average(&v, n).unwrap();
            let ac = face_average(&comb, n).unwrap();
            for j in 0..n {
                prop_assert!((dc[j] - alpha * du[j] - beta * dv[j]).abs() < 1e-10);
                prop_assert!((ac[j] - alpha * au[j] - beta * av[j]).abs() < 1e-12);
            }
        }
    }
}
