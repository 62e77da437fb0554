//! Complex eigendecomposition of a real square matrix via the Schur form.

use crate::error::{KdvfError, Result};
use nalgebra::{Complex, DMatrix, DVector};

pub type C64 = Complex<f64>;

#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: DVector<C64>,
    pub vectors: DMatrix<C64>,
    pub inverse: DMatrix<C64>,
}

impl Eigen {
    /// Diagonalizes `a` as V diag(values) V⁻¹.
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(KdvfError::Precondition("eigendecomposition needs a square matrix".into()));
        }
        let ac: DMatrix<C64> = a.map(|v| C64::new(v, 0.0));
        let schur = nalgebra::Schur::try_new(ac, f64::EPSILON, 200 * n)
            .ok_or_else(|| KdvfError::NumericalSetup("Schur iteration did not converge".into()))?;
        let (q, t) = schur.unpack();
        let values = t.diagonal();
        let scale = t.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        let smin = (scale * f64::EPSILON).max(f64::MIN_POSITIVE);
        // eigenvectors of T by back substitution, unit diagonal
        let mut x = DMatrix::<C64>::identity(n, n);
        for k in 0..n {
            let tkk = t[(k, k)];
            for j in (0..k).rev() {
                let mut s = C64::new(0.0, 0.0);
                for l in j + 1..=k {
                    s += t[(j, l)] * x[(l, k)];
                }
                let mut d = t[(j, j)] - tkk;
                if d.norm() < smin {
                    d = C64::new(smin, 0.0);
                }
                x[(j, k)] = -s / d;
            }
        }
        let xinv = x
            .clone()
            .solve_upper_triangular(&q.adjoint())
            .ok_or_else(|| KdvfError::NumericalSetup("defective eigenbasis".into()))?;
        let mut vectors = &q * &x;
        let mut inverse = xinv;
        for k in 0..n {
            let nrm = vectors.column(k).norm();
            if !(nrm.is_finite() && nrm > 0.0) {
                return Err(KdvfError::NumericalSetup("degenerate eigenvector".into()));
            }
            vectors.column_mut(k).unscale_mut(nrm);
            inverse.row_mut(k).scale_mut(nrm);
        }
        Ok(Eigen { values, vectors, inverse })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_real_part(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, z| m.max(z.re))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reconstructs_nonnormal_matrix() {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[1.0, 2.0, 0.0, 0.5, -3.0, 0.1, 1.0, 0.0, 0.0, 4.0, -2.0, 1.0, 0.2, 0.0, 1.0, 0.3],
        );
        let e = Eigen::new(&a).unwrap();
        let d = DMatrix::from_diagonal(&e.values);
        let back = &e.vectors * d * &e.inverse;
        for (u, v) in back.iter().zip(a.iter()) {
            assert!((u - C64::new(*v, 0.0)).norm() < 1e-11);
        }
        let id = &e.vectors * &e.inverse;
        assert!((id - DMatrix::<C64>::identity(4, 4)).norm() < 1e-11);
    }

    #[test]
    fn rotation_has_imaginary_pair() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let e = Eigen::new(&a).unwrap();
        let mut im: Vec<f64> = e.values.iter().map(|z| z.im).collect();
        im.sort_by(f64::total_cmp);
        assert!((im[0] + 1.0).abs() < 1e-14 && (im[1] - 1.0).abs() < 1e-14);
        assert!(e.max_real_part().abs() < 1e-14);
    }
}
