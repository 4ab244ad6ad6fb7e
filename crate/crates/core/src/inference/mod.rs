//! Variance estimation and test statistics for the debiased CUE, plus the
//! baseline standard errors used by the Monte Carlo harness.

pub mod chisq;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::ResidualData;
use crate::error::{Error, Result};
use crate::estimators::{first_stage_projection, GmmWeighting};
use crate::moments::MomentSystem;

pub use chisq::{chisq_cdf, chisq_quantile, chisq_sf};

/// `D̂(β)` (see [`MomentSystem::d_hat`]).
pub fn d_hat(ms: &MomentSystem, beta: f64) -> Result<DVector<f64>> {
    ms.d_hat(beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variance {
    /// `V̂`; the estimator's variance is `V̂/n`.
    pub v_hat: f64,
    pub se: f64,
    /// `∂²Q̂(β̂)/∂β²`.
    pub curvature: f64,
    /// `D̂'Ω̂⁻¹D̂` at β̂.
    pub meat: f64,
}

/// Sandwich variance `V̂ = H⁻¹ (D̂'Ω̂⁻¹D̂) H⁻¹` with `H = ∂²Q̂(β̂)/∂β²`; `se = √(V̂/n)`.
pub fn variance_hat(ms: &MomentSystem, beta_hat: f64) -> Result<Variance> {
    let curvature = ms.d2q_dbeta2(beta_hat)?;
    if !(curvature > 0.0) {
        return Err(Error::NonPositiveCurvature { curvature });
    }
    let w = ms.omega_hat(beta_hat)?;
    let d = ms.d_hat_with(&w);
    let meat = w.factor.inv_quad(&d);
    let v_hat = meat / (curvature * curvature);
    Ok(Variance {
        v_hat,
        se: (v_hat / ms.n() as f64).sqrt(),
        curvature,
        meat,
    })
}

/// `T̂ = n (β̂ − β*)² / V̂` with its upper-tail χ²(1) p-value.
pub fn wald_test(beta_hat: f64, v_hat: f64, n: usize, beta_star: f64) -> (f64, f64) {
    let t = n as f64 * (beta_hat - beta_star).powi(2) / v_hat;
    (t, chisq_sf(t, 1).unwrap_or(f64::NAN))
}

/// `K̂ = n (∂Q̂(β*)/∂β)² / (D̂(β*)'Ω̂(β*)⁻¹D̂(β*))` with its χ²(1) p-value.
pub fn k_statistic(ms: &MomentSystem, beta_star: f64) -> Result<(f64, f64)> {
    let w = ms.omega_hat(beta_star)?;
    let grad = ms.dq_with(&w);
    let d = ms.d_hat_with(&w);
    let denom = w.factor.inv_quad(&d);
    if !(denom > 0.0) {
        return Err(Error::Domain("K statistic: D̂'Ω̂⁻¹D̂ is zero".into()));
    }
    let k = ms.n() as f64 * grad * grad / denom;
    Ok((k, chisq_sf(k, 1)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JTest {
    pub stat: f64,
    pub df: usize,
    pub p_value: f64,
    pub just_identified: bool,
}

/// Overidentification test `J = 2n Q̂(β̂)` against χ²(m − 1). With one
/// instrument the moment is solved exactly: `J = 0`, `p = 1`.
pub fn j_statistic(ms: &MomentSystem, beta_hat: f64) -> Result<JTest> {
    let m = ms.m();
    if m <= 1 {
        return Ok(JTest {
            stat: 0.0,
            df: 0,
            p_value: 1.0,
            just_identified: true,
        });
    }
    let stat = (2.0 * ms.n() as f64 * ms.q_hat(beta_hat)?).max(0.0);
    Ok(JTest {
        stat,
        df: m - 1,
        p_value: chisq_sf(stat, (m - 1) as u32)?,
        just_identified: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstStageF {
    /// `+∞` (serialized as `null`) when the first stage fits exactly.
    pub value: f64,
    pub infinite: bool,
}

/// Homoscedastic F statistic of the no-intercept regression of `D̄` on `Z̄`:
/// `(ESS/m) / (RSS/(n − m))`.
pub fn first_stage_f(rd: &ResidualData) -> Result<FirstStageF> {
    let (n, m) = (rd.n(), rd.m());
    if n <= m + 1 {
        return Err(Error::InvalidData(format!(
            "first-stage F needs n > m + 1 (n = {n}, m = {m})"
        )));
    }
    let fitted = match first_stage_projection(rd) {
        Ok((fitted, _)) => fitted,
        Err(Error::ZeroFirstStage) => {
            return Ok(FirstStageF {
                value: 0.0,
                infinite: false,
            })
        }
        Err(e) => return Err(e),
    };
    let ess = fitted.norm_squared();
    let rss = (&rd.d_bar - &fitted).norm_squared();
    if rss <= 1e-300 || rss <= 1e-28 * ess {
        return Ok(FirstStageF {
            value: f64::INFINITY,
            infinite: true,
        });
    }
    Ok(FirstStageF {
        value: (ess / m as f64) / (rss / (n - m) as f64),
        infinite: false,
    })
}

/// Conventional homoscedastic TSLS standard error `√(σ̂² / D̄'PD̄)`,
/// `σ̂² = (1/n) Σ (Ȳ − D̄β)²`.
pub fn tsls_standard_error(rd: &ResidualData, beta: f64) -> Result<f64> {
    let (_, denom) = first_stage_projection(rd)?;
    let resid = &rd.y_bar - &rd.d_bar * beta;
    let sigma2 = resid.norm_squared() / rd.n() as f64;
    Ok((sigma2 / denom).sqrt())
}

/// Sandwich standard error of the GMM baseline.
///
/// Identity weighting: `√(S_zd'Ω̂S_zd / (n (S_zd'S_zd)²))` with `Ω̂ = Ω̂(β̂)`.
/// Two-step: `√(1 / (n S_zd'Ω̂(β̂₁)⁻¹S_zd))`.
pub fn gmm_standard_error(ms: &MomentSystem, beta: f64, weighting: GmmWeighting) -> Result<f64> {
    let szd = ms.szd();
    let n = ms.n() as f64;
    match weighting {
        GmmWeighting::Identity => {
            let omega = ms.omega(beta);
            let ss = szd.norm_squared();
            if !(ss > 0.0) {
                return Err(Error::ZeroFirstStage);
            }
            let meat = szd.dot(&(omega * szd));
            Ok((meat / (n * ss * ss)).sqrt())
        }
        GmmWeighting::TwoStep => {
            let beta1 = szd.dot(ms.szy()) / szd.norm_squared();
            let w = ms.omega_hat(beta1)?;
            let info = w.factor.inv_quad(szd);
            if !(info > 0.0) {
                return Err(Error::ZeroFirstStage);
            }
            Ok((1.0 / (n * info)).sqrt())
        }
    }
}

/// Everything reported for one CUE fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub se: f64,
    pub v_hat: f64,
    pub d_hat: Vec<f64>,
    /// `∂²Q̂(β̂)/∂β²` (the inverse of τ̂²).
    pub curvature: f64,
    /// Null value tested by the Wald and K statistics.
    pub beta_star: f64,
    pub wald: f64,
    pub wald_p: f64,
    pub k_stat: f64,
    pub k_p: f64,
    pub j: JTest,
    pub first_stage_f: FirstStageF,
    /// `β̂ ± 1.96·se`.
    pub ci95: (f64, f64),
}

/// Full inference bundle at `β̂` for testing `H₀: β = β*`.
pub fn infer(ms: &MomentSystem, rd: &ResidualData, beta_hat: f64, beta_star: f64) -> Result<InferenceReport> {
    let var = variance_hat(ms, beta_hat)?;
    let (wald, wald_p) = wald_test(beta_hat, var.v_hat, ms.n(), beta_star);
    let (k_stat, k_p) = k_statistic(ms, beta_star)?;
    Ok(InferenceReport {
        se: var.se,
        v_hat: var.v_hat,
        d_hat: ms.d_hat(beta_hat)?.iter().copied().collect(),
        curvature: var.curvature,
        beta_star,
        wald,
        wald_p,
        k_stat,
        k_p,
        j: j_statistic(ms, beta_hat)?,
        first_stage_f: first_stage_f(rd)?,
        ci95: (beta_hat - 1.96 * var.se, beta_hat + 1.96 * var.se),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn toy() -> MomentSystem {
        let rd = ResidualData::from_parts(
            DVector::from_vec(vec![2.0, 0.0]),
            DVector::from_vec(vec![1.0, -1.0]),
            DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
        )
        .unwrap();
        MomentSystem::new(&rd)
    }

    #[test]
    fn wald_identities() {
        let (t, p) = wald_test(0.7, 2.0, 100, 0.7);
        assert_eq!(t, 0.0);
        assert!((p - 1.0).abs() < 1e-15);
        let (t1, _) = wald_test(0.7, 2.0, 100, 0.2);
        let (t2, _) = wald_test(0.7, 4.0, 100, 0.2);
        assert_eq!(t1, 2.0 * t2);
    }

    #[test]
    fn wald_five_percent_critical_value() {
        let (_, p) = wald_test(3.8415_f64.sqrt(), 1.0, 1, 0.0);
        assert!((p - 0.05).abs() < 1e-4);
    }

    #[test]
    fn k_vanishes_at_cue_solution() {
        let (k, p) = k_statistic(&toy(), 1.0).unwrap();
        assert!(k.abs() < 1e-20);
        assert!((p - 1.0).abs() < 1e-10);
    }

    #[test]
    fn j_is_zero_when_just_identified() {
        let j = j_statistic(&toy(), 0.3).unwrap();
        assert_eq!(j.stat, 0.0);
        assert_eq!(j.p_value, 1.0);
        assert!(j.just_identified);
    }

    #[test]
    fn first_stage_f_extremes() {
        // D̄ orthogonal to the single instrument
        let rd = ResidualData::from_parts(
            DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]),
            DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]),
            DMatrix::from_column_slice(4, 1, &[1.0, -1.0, 1.0, -1.0]),
        )
        .unwrap();
        assert!(first_stage_f(&rd).unwrap().value.abs() < 1e-12);

        let z = DMatrix::from_fn(50, 2, |i, j| ((i * (j + 3)) % 7) as f64 - 3.0);
        let d = DVector::from_fn(50, |i, _| 2.0 * z[(i, 0)] - z[(i, 1)] + 1e-4 * ((i % 3) as f64 - 1.0));
        let rd = ResidualData::from_parts(DVector::zeros(50), d.clone(), z.clone()).unwrap();
        assert!(first_stage_f(&rd).unwrap().value > 1e3);

        let exact = DVector::from_fn(50, |i, _| 2.0 * z[(i, 0)] - z[(i, 1)]);
        let rd = ResidualData::from_parts(DVector::zeros(50), exact, z).unwrap();
        assert!(first_stage_f(&rd).unwrap().infinite);
    }

    #[test]
    fn non_positive_curvature_is_reported() {
        // Q̂ has a maximum between the two roots of a two-instrument system far from them
        let rd = ResidualData::from_parts(
            DVector::from_vec(vec![1.0, -1.0, 0.5, 2.0]),
            DVector::from_vec(vec![0.1, 0.2, -0.1, 0.05]),
            DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, -1.0]),
        )
        .unwrap();
        let ms = MomentSystem::new(&rd);
        // far from the data, Q̂(β) flattens towards its asymptote from below or above;
        // scan for a point with negative curvature
        let bad = (-200..200)
            .map(|k| k as f64 * 0.5)
            .find(|&b| ms.d2q_dbeta2(b).is_ok_and(|h| h < 0.0));
        let b = bad.expect("objective is not convex everywhere");
        assert!(matches!(variance_hat(&ms, b), Err(Error::NonPositiveCurvature { .. })));
    }
}
