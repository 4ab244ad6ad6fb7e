//! Quadratically penalized least squares with generalized cross-validation,
//! shared by the ridge and additive spline learners.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ModelSummary, PredictiveModel};
use crate::error::{Error, Result};
use crate::linalg::{column_means, SpdFactor};

/// Geometric grid of `size` values from `lo` to `hi`.
pub(crate) fn geometric_grid(lo: f64, hi: f64, size: usize) -> Vec<f64> {
    if size == 1 {
        return vec![lo];
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..size)
        .map(|i| (llo + (lhi - llo) * i as f64 / (size - 1) as f64).exp())
        .collect()
}

/// Centered design `W` with penalty `S`; the intercept is the target mean and
/// is never penalized.
pub(super) struct PenalizedDesign {
    w: DMatrix<f64>,
    gram: DMatrix<f64>,
    penalty: DMatrix<f64>,
    /// `trace(W'W) / trace(S)`: grid multipliers are relative to this.
    scale: f64,
}

pub(super) struct Candidate {
    pub multiplier: f64,
    factor: SpdFactor,
    edf: f64,
}

pub(super) struct PenalizedFit {
    pub coefs: DVector<f64>,
    pub multiplier: f64,
    pub edf: f64,
}

impl PenalizedDesign {
    pub fn new(w: DMatrix<f64>, penalty: DMatrix<f64>) -> Self {
        let gram = w.transpose() * &w;
        let tr_s = penalty.trace();
        let scale = if tr_s > 0.0 { gram.trace() / tr_s } else { 1.0 };
        PenalizedDesign {
            w,
            gram,
            penalty,
            scale,
        }
    }

    pub fn ncols(&self) -> usize {
        self.w.ncols()
    }

    /// Factors `W'W + λ S` for every multiplier; singular candidates are skipped.
    pub fn candidates(&self, grid: &[f64]) -> Vec<Candidate> {
        grid.iter()
            .filter_map(|&mult| {
                let lambda = mult * self.scale;
                let a = &self.gram + &self.penalty * lambda;
                let factor = SpdFactor::new(&a).ok()?;
                let edf = factor.solve_matrix(&self.gram).trace();
                Some(Candidate {
                    multiplier: mult,
                    factor,
                    edf,
                })
            })
            .collect()
    }

    /// GCV selection for a centered target `tc`.
    pub fn fit(&self, candidates: &[Candidate], tc: &DVector<f64>) -> Result<PenalizedFit> {
        let n = self.w.nrows() as f64;
        let wt = self.w.transpose() * tc;
        let tt = tc.norm_squared();
        let mut best: Option<(f64, PenalizedFit)> = None;
        for c in candidates {
            // one extra degree of freedom for the intercept
            let edf = c.edf + 1.0;
            if edf >= n {
                continue;
            }
            let b = c.factor.solve(&wt);
            let rss = (tt - 2.0 * b.dot(&wt) + b.dot(&(&self.gram * &b))).max(0.0);
            let gcv = n * rss / (n - edf).powi(2);
            if !gcv.is_finite() {
                continue;
            }
            if best.as_ref().is_none_or(|(g, _)| gcv < *g) {
                best = Some((
                    gcv,
                    PenalizedFit {
                        coefs: b,
                        multiplier: c.multiplier,
                        edf,
                    },
                ));
            }
        }
        best.map(|(_, f)| f).ok_or(Error::DegenerateGcv)
    }
}

/// Ridge penalty grid: multipliers of `trace(X̃'X̃)/p` on the standardized design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RidgeConfig {
    pub grid_size: usize,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
}

impl Default for RidgeConfig {
    fn default() -> Self {
        RidgeConfig {
            grid_size: 30,
            lambda_lo: 1e-6,
            lambda_hi: 1e4,
        }
    }
}

impl RidgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_size == 0 || !(self.lambda_lo > 0.0) || !(self.lambda_hi >= self.lambda_lo) {
            return Err(Error::Config(format!("invalid ridge grid {self:?}")));
        }
        Ok(())
    }
}

/// Ridge regression on standardized covariates, penalty chosen by GCV.
pub fn fit_ridge(x: &DMatrix<f64>, t: &DVector<f64>, cfg: &RidgeConfig) -> Result<(PredictiveModel, ModelSummary)> {
    let mut out = fit_ridge_many(x, std::slice::from_ref(t), cfg)?;
    Ok(out.pop().expect("one target"))
}

pub(super) fn fit_ridge_many(
    x: &DMatrix<f64>,
    targets: &[DVector<f64>],
    cfg: &RidgeConfig,
) -> Result<Vec<(PredictiveModel, ModelSummary)>> {
    cfg.validate()?;
    let n = x.nrows();
    let means = column_means(x);
    let mut keep = Vec::new();
    let mut scales = Vec::new();
    for j in 0..x.ncols() {
        let sd = (x.column(j).iter().map(|v| (v - means[j]).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64).sqrt();
        if sd > 1e-12 * (1.0 + means[j].abs()) {
            keep.push(j);
            scales.push(sd);
        }
    }
    let w = DMatrix::from_fn(n, keep.len(), |i, k| (x[(i, keep[k])] - means[keep[k]]) / scales[k]);
    let design = PenalizedDesign::new(w, DMatrix::identity(keep.len(), keep.len()));
    let candidates = design.candidates(&geometric_grid(cfg.lambda_lo, cfg.lambda_hi, cfg.grid_size));
    targets
        .iter()
        .map(|t| {
            let t_mean = t.mean();
            let tc = t.add_scalar(-t_mean);
            let fit = design.fit(&candidates, &tc)?;
            let mut coefs = DVector::zeros(x.ncols());
            for (k, &j) in keep.iter().enumerate() {
                coefs[j] = fit.coefs[k] / scales[k];
            }
            let intercept = t_mean - means.dot(&coefs);
            let mut summary = ModelSummary::new("ridge");
            summary.penalty = Some(fit.multiplier);
            summary.basis_size = Some(design.ncols());
            Ok((PredictiveModel::Linear { intercept, coefs }, summary))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(80, 4, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let t = DVector::from_fn(80, |i, _| {
            x[(i, 0)] * 2.0 - x[(i, 2)] + 0.3 * (rng.random::<f64>() - 0.5)
        });
        (x, t)
    }

    #[test]
    fn grid_endpoints() {
        let g = geometric_grid(1e-6, 1e4, 30);
        assert_eq!(g.len(), 30);
        assert!((g[0] - 1e-6).abs() < 1e-18);
        assert!((g[29] / 1e4 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ridge_invariant_to_affine_rescaling() {
        let (x, t) = random_problem(3);
        let (m1, _) = fit_ridge(&x, &t, &RidgeConfig::default()).unwrap();
        let mut x2 = x.clone();
        x2.column_mut(1).apply(|v| *v = 50.0 * *v - 7.0);
        x2.column_mut(3).apply(|v| *v = -0.01 * *v + 3.0);
        let (m2, _) = fit_ridge(&x2, &t, &RidgeConfig::default()).unwrap();
        let diff = (m1.predict(&x) - m2.predict(&x2)).amax();
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn ridge_constant_target() {
        let (x, _) = random_problem(5);
        let t = DVector::from_element(80, -2.0);
        let (m, _) = fit_ridge(&x, &t, &RidgeConfig::default()).unwrap();
        assert!((m.predict(&x).add_scalar(2.0)).amax() < 1e-12);
    }
}
