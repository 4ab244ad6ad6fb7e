//! First-step nuisance learners and the cross-fitting engine.
//!
//! Every learner maps a training slice `(X, t)` to a [`PredictiveModel`].
//! Learners that share work across targets trained on the same covariates
//! (one design decomposition per fold for the ridge and spline learners, one
//! set of Gram matrices for the lasso) expose that through [`fit_targets`].

mod crossfit;
mod lasso;
mod linear;
mod penalized;
mod spline;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use crossfit::{cross_fit, partial_out, NuisanceFit};
pub use lasso::{fit_lasso, LassoConfig, LassoFit};
pub use linear::fit_linear;
pub use penalized::{fit_ridge, RidgeConfig};
pub use spline::{fit_spline_additive, SplineConfig};

/// True nuisance functions `(ℓ₀, r₀, α₀)` evaluable at any covariate row.
pub trait NuisanceFunctions: Send + Sync + fmt::Debug {
    /// Number of instruments `α₀` returns.
    fn m(&self) -> usize;
    /// Outcome regression `E(Y | X = x)`.
    fn ell(&self, x: &[f64]) -> f64;
    /// Treatment regression `E(D | X = x)`.
    fn r(&self, x: &[f64]) -> f64;
    /// Instrument propensity scores `E(Z | X = x)`, written into `out` (length `m`).
    fn alpha(&self, x: &[f64], out: &mut [f64]);
}

/// Which learner estimates the nuisance regressions, with its hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LearnerSpec {
    Linear,
    Ridge(RidgeConfig),
    Lasso(LassoConfig),
    SplineAdditive(SplineConfig),
    /// Evaluates supplied true functions; never trains.
    #[serde(skip)]
    Oracle(Arc<dyn NuisanceFunctions>),
}

impl LearnerSpec {
    pub fn spline_default() -> Self {
        LearnerSpec::SplineAdditive(SplineConfig::default())
    }

    pub fn lasso_default() -> Self {
        LearnerSpec::Lasso(LassoConfig::default())
    }

    /// Cross-validated lasso followed by least squares on the selected support.
    pub fn post_lasso_default() -> Self {
        LearnerSpec::Lasso(LassoConfig {
            refit: true,
            ..LassoConfig::default()
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LearnerSpec::Linear => "linear",
            LearnerSpec::Ridge(_) => "ridge",
            LearnerSpec::Lasso(c) if c.refit => "post-lasso",
            LearnerSpec::Lasso(_) => "lasso",
            LearnerSpec::SplineAdditive(_) => "spline-additive",
            LearnerSpec::Oracle(_) => "oracle",
        }
    }

    /// Parses a learner name with default hyperparameters.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "linear" => Ok(LearnerSpec::Linear),
            "ridge" => Ok(LearnerSpec::Ridge(RidgeConfig::default())),
            "lasso" => Ok(LearnerSpec::lasso_default()),
            "post-lasso" => Ok(LearnerSpec::post_lasso_default()),
            "spline" | "spline-additive" | "gam" => Ok(LearnerSpec::spline_default()),
            other => Err(Error::Config(format!("unknown learner {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerSpec::Linear | LearnerSpec::Oracle(_) => Ok(()),
            LearnerSpec::Ridge(c) => c.validate(),
            LearnerSpec::Lasso(c) => c.validate(),
            LearnerSpec::SplineAdditive(c) => c.validate(),
        }
    }
}

/// Fitted regression mapping a covariate row to a prediction.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictiveModel {
    Constant(f64),
    /// `intercept + x' coefs` on the raw covariate scale.
    Linear {
        intercept: f64,
        coefs: DVector<f64>,
    },
    Additive(spline::AdditiveModel),
}

impl PredictiveModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match self {
            PredictiveModel::Constant(c) => *c,
            PredictiveModel::Linear { intercept, coefs } => {
                intercept + coefs.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
            }
            PredictiveModel::Additive(a) => a.predict_row(x),
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let mut row = vec![0.0; x.ncols()];
        DVector::from_iterator(
            x.nrows(),
            (0..x.nrows()).map(|i| {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = x[(i, j)];
                }
                self.predict_row(&row)
            }),
        )
    }
}

/// Per-model diagnostics kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub fold: usize,
    pub target: String,
    pub learner: String,
    /// Selected penalty (lasso λ, ridge or spline smoothing multiplier).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub basis_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nonzero: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

impl ModelSummary {
    pub(crate) fn new(learner: &str) -> Self {
        ModelSummary {
            fold: 0,
            target: String::new(),
            learner: learner.to_string(),
            penalty: None,
            basis_size: None,
            nonzero: None,
            notes: Vec::new(),
        }
    }
}

/// Fits one model per target on a shared covariate matrix. `seed` drives any
/// internal randomness (lasso cross-validation folds).
pub fn fit_targets(
    spec: &LearnerSpec,
    x: &DMatrix<f64>,
    targets: &[DVector<f64>],
    seed: u64,
) -> Result<Vec<(PredictiveModel, ModelSummary)>> {
    if x.ncols() == 0 {
        return Ok(targets
            .iter()
            .map(|t| {
                let mut s = ModelSummary::new(spec.name());
                s.notes.push("no covariates: training mean".into());
                (PredictiveModel::Constant(t.mean()), s)
            })
            .collect());
    }
    match spec {
        LearnerSpec::Linear => linear::fit_linear_many(x, targets),
        LearnerSpec::Ridge(cfg) => penalized::fit_ridge_many(x, targets, cfg),
        LearnerSpec::Lasso(cfg) => lasso::fit_lasso_many(x, targets, cfg, seed),
        LearnerSpec::SplineAdditive(cfg) => spline::fit_spline_many(x, targets, cfg),
        LearnerSpec::Oracle(_) => Err(Error::Config("oracle learner does not train".into())),
    }
}

/// Error helper: indices `idx` of the rows of `x`.
pub(crate) fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

pub(crate) fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}
