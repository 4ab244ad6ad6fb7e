//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! Weighted quadratic forms `v' A⁻¹ v` are always evaluated through a
//! Cholesky factor; nothing in the library forms an explicit inverse.

use nalgebra::{DMatrix, DVector};

/// Pivot ratio (squared) below which a Cholesky factor is treated as singular.
const SINGULAR_RATIO: f64 = 1e-13;

/// Lower-triangular Cholesky factor `A = L L'` of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    l: DMatrix<f64>,
    /// Smallest diagonal entry of `L`.
    pub min_pivot: f64,
    /// Largest diagonal entry of `L`.
    pub max_pivot: f64,
    /// Ridge added to the diagonal before factoring (0 when none was needed).
    pub jitter: f64,
}

/// Diagnostics returned when a matrix could not be factored.
#[derive(Debug, Clone, Copy)]
pub struct FactorFailure {
    pub min_pivot: f64,
    pub max_pivot: f64,
}

impl SpdFactor {
    /// Plain Cholesky. Fails when a pivot is non-positive or tiny relative to
    /// the largest diagonal entry of `a`.
    pub fn new(a: &DMatrix<f64>) -> Result<Self, FactorFailure> {
        Self::with_jitter(a, 0.0)
    }

    /// Cholesky of `a`; on failure retries once with `rel_jitter · mean(diag(a))`
    /// added to the diagonal.
    pub fn new_with_retry(a: &DMatrix<f64>, rel_jitter: f64) -> Result<Self, FactorFailure> {
        match Self::new(a) {
            Ok(f) => Ok(f),
            Err(first) => {
                let n = a.nrows().max(1) as f64;
                let mean_diag = a.diagonal().iter().sum::<f64>() / n;
                let jitter = rel_jitter * mean_diag;
                if !(jitter > 0.0) {
                    return Err(first);
                }
                Self::with_jitter(a, jitter)
            }
        }
    }

    fn with_jitter(a: &DMatrix<f64>, jitter: f64) -> Result<Self, FactorFailure> {
        let n = a.nrows();
        debug_assert_eq!(n, a.ncols());
        let max_diag = a.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs())) + jitter;
        let mut l = DMatrix::<f64>::zeros(n, n);
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot = 0.0_f64;
        for j in 0..n {
            let mut d = a[(j, j)] + jitter;
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > SINGULAR_RATIO * max_diag) || !d.is_finite() {
                let p = if d > 0.0 { d.sqrt() } else { 0.0 };
                return Err(FactorFailure {
                    min_pivot: min_pivot.min(p),
                    max_pivot: max_pivot.max(p),
                });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            min_pivot = min_pivot.min(djj);
            max_pivot = max_pivot.max(djj);
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        if n == 0 {
            min_pivot = 0.0;
        }
        Ok(SpdFactor {
            l,
            min_pivot,
            max_pivot,
            jitter,
        })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// `L⁻¹ b` by forward substitution.
    pub fn forward(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut x = b.clone();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.l[(i, k)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }

    /// `L'⁻¹ b` by back substitution.
    pub fn backward(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut x = b.clone();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }

    /// `A⁻¹ b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.backward(&self.forward(b))
    }

    /// `A⁻¹ B` column by column.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col = self.solve(&b.column(j).into_owned());
            out.set_column(j, &col);
        }
        out
    }

    /// `v' A⁻¹ v = ‖L⁻¹ v‖²`.
    pub fn inv_quad(&self, v: &DVector<f64>) -> f64 {
        self.forward(v).norm_squared()
    }

    /// `u' A⁻¹ v`.
    pub fn inv_bilinear(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        self.forward(u).dot(&self.forward(v))
    }
}

/// Least squares `min ‖y − X b‖` via Householder QR. Returns `None` when the
/// design is numerically rank deficient (|R_jj| below `1e-10 · max |R_jj|`).
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let p = x.ncols();
    if p == 0 {
        return Some(DVector::zeros(0));
    }
    if x.nrows() < p {
        return None;
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let max_r = r.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !(max_r > 0.0) || r.diagonal().iter().any(|v| v.abs() <= 1e-10 * max_r) {
        return None;
    }
    let qty = qr.q().transpose() * y;
    r.solve_upper_triangular(&qty)
}

/// Column means of `x`.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_and_quadratic_form_match_explicit_inverse() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let f = SpdFactor::new(&a).unwrap();
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let inv = a.clone().try_inverse().unwrap();
        let expected = (v.transpose() * &inv * &v)[(0, 0)];
        assert!((f.inv_quad(&v) - expected).abs() < 1e-12);
        let x = f.solve(&v);
        assert!((&a * x - &v).norm() < 1e-12);
        let llt = f.lower() * f.lower().transpose();
        assert!((llt - a).norm() < 1e-12);
    }

    #[test]
    fn zero_matrix_fails_even_with_retry() {
        let a = DMatrix::<f64>::zeros(2, 2);
        assert!(SpdFactor::new_with_retry(&a, 1e-10).is_err());
    }

    #[test]
    fn rank_one_matrix_is_rejected() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let a = &v * v.transpose();
        assert!(SpdFactor::new(&a).is_err());
    }

    #[test]
    fn least_squares_detects_duplicate_columns() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert!(least_squares(&x, &y).is_none());
    }
}
