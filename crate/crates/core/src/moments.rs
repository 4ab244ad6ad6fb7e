//! Cross-fitted moment system for the linear moment `g_i(β) = Z̄_i (Ȳ_i − D̄_i β)`.
//!
//! Because the moment is affine in β, `ĝ(β) = S_zy − β S_zd` and
//! `Ω̂(β) = A_yy − 2β A_yd + β² A_dd` with
//! `A_ab = (1/n) Σ Z̄_i Z̄_i' a_i b_i`. These are accumulated once, so each
//! objective evaluation costs one `m × m` assembly and one Cholesky.

use nalgebra::{DMatrix, DVector};

use crate::data::ResidualData;
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;

/// Relative ridge used in the single retry when `Ω̂(β)` fails to factor.
pub const OMEGA_JITTER: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct MomentSystem {
    n: usize,
    szy: DVector<f64>,
    szd: DVector<f64>,
    a_yy: DMatrix<f64>,
    a_yd: DMatrix<f64>,
    a_dd: DMatrix<f64>,
}

/// `Ω̂(β)` with its factorization.
#[derive(Debug, Clone)]
pub struct WeightingState {
    pub beta: f64,
    pub omega: DMatrix<f64>,
    pub factor: SpdFactor,
}

impl WeightingState {
    pub fn min_pivot(&self) -> f64 {
        self.factor.min_pivot
    }

    pub fn max_pivot(&self) -> f64 {
        self.factor.max_pivot
    }
}

impl MomentSystem {
    pub fn new(rd: &ResidualData) -> Self {
        let n = rd.n();
        let m = rd.m();
        let nf = n as f64;
        let mut szy = DVector::zeros(m);
        let mut szd = DVector::zeros(m);
        let mut a_yy = DMatrix::zeros(m, m);
        let mut a_yd = DMatrix::zeros(m, m);
        let mut a_dd = DMatrix::zeros(m, m);
        let mut z = vec![0.0; m];
        for i in 0..n {
            for (j, v) in z.iter_mut().enumerate() {
                *v = rd.z_bar[(i, j)];
            }
            let (y, d) = (rd.y_bar[i], rd.d_bar[i]);
            let (wyy, wyd, wdd) = (y * y, y * d, d * d);
            for a in 0..m {
                szy[a] += z[a] * y;
                szd[a] += z[a] * d;
                for b in 0..=a {
                    let zz = z[a] * z[b];
                    a_yy[(a, b)] += zz * wyy;
                    a_yd[(a, b)] += zz * wyd;
                    a_dd[(a, b)] += zz * wdd;
                }
            }
        }
        for mat in [&mut a_yy, &mut a_yd, &mut a_dd] {
            for a in 0..m {
                for b in 0..a {
                    mat[(b, a)] = mat[(a, b)];
                }
            }
            *mat /= nf;
        }
        szy /= nf;
        szd /= nf;
        MomentSystem {
            n,
            szy,
            szd,
            a_yy,
            a_yd,
            a_dd,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.szy.len()
    }

    /// `(1/n) Σ Z̄_i Ȳ_i`.
    pub fn szy(&self) -> &DVector<f64> {
        &self.szy
    }

    /// `(1/n) Σ Z̄_i D̄_i`.
    pub fn szd(&self) -> &DVector<f64> {
        &self.szd
    }

    /// `Ĝ = ∂ĝ/∂β = −S_zd`, constant in β.
    pub fn g_jacobian(&self) -> DVector<f64> {
        -&self.szd
    }

    /// `ĝ(β) = S_zy − β S_zd`.
    pub fn g_bar(&self, beta: f64) -> DVector<f64> {
        &self.szy - &self.szd * beta
    }

    /// Unfactored `Ω̂(β)`.
    pub fn omega(&self, beta: f64) -> DMatrix<f64> {
        &self.a_yy - &self.a_yd * (2.0 * beta) + &self.a_dd * (beta * beta)
    }

    /// `Ω̂(β)` factored for solves; one jittered retry before giving up.
    pub fn omega_hat(&self, beta: f64) -> Result<WeightingState> {
        let omega = self.omega(beta);
        match SpdFactor::new_with_retry(&omega, OMEGA_JITTER) {
            Ok(factor) => Ok(WeightingState { beta, omega, factor }),
            Err(fail) => Err(Error::SingularWeighting {
                beta,
                min_pivot: fail.min_pivot,
                max_pivot: fail.max_pivot,
            }),
        }
    }

    /// `∂Ω̂/∂β = −(2/n) Σ Z̄_i Z̄_i' (Ȳ_i − D̄_i β) D̄_i`.
    pub fn d_omega_dbeta(&self, beta: f64) -> DMatrix<f64> {
        &self.a_dd * (2.0 * beta) - &self.a_yd * 2.0
    }

    /// `(1/n) Σ G_i g_i(β)'` with `G_i = −Z̄_i D̄_i`; symmetric.
    pub fn cross_jacobian_moment(&self, beta: f64) -> DMatrix<f64> {
        &self.a_dd * beta - &self.a_yd
    }

    /// `Q̂(β) = ĝ' Ω̂⁻¹ ĝ / 2`.
    pub fn q_hat(&self, beta: f64) -> Result<f64> {
        let w = self.omega_hat(beta)?;
        Ok(0.5 * w.factor.inv_quad(&self.g_bar(beta)))
    }

    /// `∂Q̂/∂β = ĝ'Ω̂⁻¹Ĝ + ½ ĝ'Âĝ`, `Â = −Ω̂⁻¹ (∂Ω̂/∂β) Ω̂⁻¹`.
    pub fn dq_dbeta(&self, beta: f64) -> Result<f64> {
        let w = self.omega_hat(beta)?;
        Ok(self.dq_with(&w))
    }

    pub(crate) fn dq_with(&self, w: &WeightingState) -> f64 {
        let g = self.g_bar(w.beta);
        let u = w.factor.solve(&g);
        let d_omega = self.d_omega_dbeta(w.beta);
        u.dot(&self.g_jacobian()) - 0.5 * u.dot(&(d_omega * &u))
    }

    /// `(Q̂, ∂Q̂/∂β)` from one factorization.
    pub fn objective(&self, beta: f64) -> Result<(f64, f64)> {
        let w = self.omega_hat(beta)?;
        let q = 0.5 * w.factor.inv_quad(&self.g_bar(beta));
        Ok((q, self.dq_with(&w)))
    }

    /// Central difference of the analytic gradient, step `1e-5 · max(1, |β|)`.
    pub fn d2q_dbeta2(&self, beta: f64) -> Result<f64> {
        let h = 1e-5 * beta.abs().max(1.0);
        self.d2q_dbeta2_step(beta, h)
    }

    pub fn d2q_dbeta2_step(&self, beta: f64, h: f64) -> Result<f64> {
        let up = self.dq_dbeta(beta + h)?;
        let down = self.dq_dbeta(beta - h)?;
        Ok((up - down) / (2.0 * h))
    }

    /// `D̂(β) = Ĝ − [(1/n) Σ G_i g_i'] Ω̂⁻¹ ĝ`.
    pub fn d_hat(&self, beta: f64) -> Result<DVector<f64>> {
        let w = self.omega_hat(beta)?;
        Ok(self.d_hat_with(&w))
    }

    pub(crate) fn d_hat_with(&self, w: &WeightingState) -> DVector<f64> {
        let u = w.factor.solve(&self.g_bar(w.beta));
        self.g_jacobian() - self.cross_jacobian_moment(w.beta) * u
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// n = 2, m = 1, Z̄ = (1, −1), Ȳ = (2, 0), D̄ = (1, −1).
    pub(crate) fn toy() -> MomentSystem {
        let rd = ResidualData::from_parts(
            DVector::from_vec(vec![2.0, 0.0]),
            DVector::from_vec(vec![1.0, -1.0]),
            DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
        )
        .unwrap();
        MomentSystem::new(&rd)
    }

    #[test]
    fn toy_moment_is_one_minus_beta() {
        let ms = toy();
        for &b in &[-1.0, 0.0, 0.5, 2.0] {
            assert!((ms.g_bar(b)[0] - (1.0 - b)).abs() < 1e-15);
        }
    }

    #[test]
    fn toy_omega_and_derivative_at_zero() {
        let ms = toy();
        assert!((ms.omega_hat(0.0).unwrap().omega[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((ms.d_omega_dbeta(0.0)[(0, 0)] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn toy_objective_gradient_and_d_hat() {
        let ms = toy();
        assert!((ms.q_hat(0.0).unwrap() - 0.25).abs() < 1e-15);
        // Q(β) = (1−β)² / (2(2 − 2β + β²)); by hand Q'(0) = (−2·4 + 1·4)/16
        assert!((ms.dq_dbeta(0.0).unwrap() + 0.25).abs() < 1e-15);
        // Ĝ = −1, (1/n)ΣG_i g_i' = −1, Ω̂⁻¹ĝ = 1/2 → D̂ = −1 + 1/2
        assert!((ms.d_hat(0.0).unwrap()[0] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_residuals_make_weighting_singular() {
        let rd = ResidualData::from_parts(
            DVector::from_vec(vec![2.0, -1.0, 0.5]),
            DVector::from_vec(vec![1.0, -0.5, 0.25]),
            DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 0.5, -1.0, 2.0]),
        )
        .unwrap();
        let ms = MomentSystem::new(&rd);
        assert!(matches!(ms.omega_hat(2.0), Err(Error::SingularWeighting { beta, .. }) if beta == 2.0));
        assert!(matches!(ms.q_hat(2.0), Err(Error::SingularWeighting { .. })));
    }

    #[test]
    fn zero_instruments_give_zero_moment() {
        let rd = ResidualData::from_parts(
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![3.0, 4.0]),
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        let ms = MomentSystem::new(&rd);
        assert_eq!(ms.g_bar(1.7).amax(), 0.0);
    }

    #[test]
    fn zero_treatment_gives_zero_omega_derivative() {
        let rd = ResidualData::from_parts(
            DVector::from_vec(vec![1.0, 2.0, -1.0]),
            DVector::zeros(3),
            DMatrix::from_column_slice(3, 1, &[1.0, 0.5, 2.0]),
        )
        .unwrap();
        assert_eq!(MomentSystem::new(&rd).d_omega_dbeta(0.3).amax(), 0.0);
    }
}
