//! Point estimators: debiased CUE, TSLS, identity-weighted GMM and their
//! oracle counterparts.

use serde::{Deserialize, Serialize};

use crate::data::{residualize_unfolded, Dataset, ResidualData};
use crate::error::{Error, Result};
use crate::learners::{NuisanceFit, NuisanceFunctions};
use crate::linalg::least_squares;
use crate::moments::MomentSystem;
use crate::optimize::brent_minimize;

/// Hard cap on the default search interval.
pub const INTERVAL_CAP: f64 = 50.0;

/// Compact parameter set searched by the CUE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchInterval {
    pub lo: f64,
    pub hi: f64,
    pub grid_points: usize,
    pub refine_tol: f64,
}

impl SearchInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let s = SearchInterval {
            lo,
            hi,
            grid_points: 201,
            refine_tol: 1e-9,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::Config(format!(
                "search interval needs lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        if self.grid_points < 3 || !(self.refine_tol > 0.0) {
            return Err(Error::Config(
                "search grid needs ≥ 3 points and a positive tolerance".into(),
            ));
        }
        Ok(())
    }

    /// `TSLS ± 10·SE` (naive homoscedastic SE) intersected with `[−50, 50]`;
    /// the full cap when TSLS is unavailable.
    pub fn around_tsls(rd: &ResidualData) -> Self {
        let fallback = SearchInterval::new(-INTERVAL_CAP, INTERVAL_CAP).expect("valid cap");
        let Ok(tsls) = estimate_tsls(rd) else {
            return fallback;
        };
        let Ok(se) = crate::inference::tsls_standard_error(rd, tsls.beta_hat) else {
            return fallback;
        };
        let lo = (tsls.beta_hat - 10.0 * se).max(-INTERVAL_CAP);
        let hi = (tsls.beta_hat + 10.0 * se).min(INTERVAL_CAP);
        SearchInterval::new(lo, hi).unwrap_or(fallback)
    }

    fn grid(&self) -> Vec<f64> {
        let k = self.grid_points;
        (0..k)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (k - 1) as f64)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cue,
    Tsls,
    GmmIdentity,
    GmmTwoStep,
    OracleCue,
    OracleGmm,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Cue => "debiased-CUE",
            Method::Tsls => "TSLS",
            Method::GmmIdentity | Method::GmmTwoStep => "debiased-GMM",
            Method::OracleCue => "oracle-CUE",
            Method::OracleGmm => "oracle-GMM",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: Method,
    pub beta_hat: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective_at_min: Option<f64>,
    /// `|∂Q̂(β̂)/∂β|` for the CUE.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stationarity: Option<f64>,
    pub boundary_flag: bool,
    pub multi_min_flag: bool,
    /// Grid points skipped because `Ω̂(β)` was singular there.
    pub skipped_grid_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval: Option<SearchInterval>,
}

impl EstimateReport {
    fn closed_form(method: Method, beta_hat: f64) -> Self {
        EstimateReport {
            method,
            beta_hat,
            objective_at_min: None,
            stationarity: None,
            boundary_flag: false,
            multi_min_flag: false,
            skipped_grid_points: 0,
            interval: None,
        }
    }
}

/// Debiased CUE: grid scan of `Q̂` over the interval, then Brent refinement
/// around each grid-local minimum.
pub fn estimate_cue(ms: &MomentSystem, interval: &SearchInterval) -> Result<EstimateReport> {
    estimate_cue_as(ms, interval, Method::Cue)
}

fn estimate_cue_as(ms: &MomentSystem, interval: &SearchInterval, method: Method) -> Result<EstimateReport> {
    interval.validate()?;
    let grid = interval.grid();
    let values: Vec<Option<f64>> = grid
        .iter()
        .map(|&b| ms.q_hat(b).ok().filter(|q| q.is_finite()))
        .collect();
    let skipped = values.iter().filter(|v| v.is_none()).count();
    if skipped == values.len() {
        return Err(Error::NoFiniteMinimum);
    }

    let k = grid.len();
    let at = |i: usize| values[i].unwrap_or(f64::INFINITY);
    let mut local: Vec<usize> = (0..k)
        .filter(|&i| values[i].is_some() && (i == 0 || at(i) <= at(i - 1)) && (i + 1 == k || at(i) <= at(i + 1)))
        .collect();
    local.sort_by(|&a, &b| at(a).total_cmp(&at(b)));
    local.truncate(10);

    let objective = |b: f64| ms.q_hat(b).unwrap_or(f64::INFINITY);
    let refined: Vec<(f64, f64)> = local
        .iter()
        .map(|&i| {
            let a = grid[i.saturating_sub(1)];
            let b = grid[(i + 1).min(k - 1)];
            let r = brent_minimize(objective, a, b, interval.refine_tol, 200);
            let x = polish_stationary(ms, r.x, a, b);
            let fx = if x == r.x { r.fx } else { objective(x) };
            if fx <= at(i) {
                (x, fx)
            } else {
                (grid[i], at(i))
            }
        })
        .collect();
    let &(beta_hat, q_min) = refined
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(Error::NoFiniteMinimum)?;
    if !q_min.is_finite() {
        return Err(Error::NoFiniteMinimum);
    }
    let multi_min_flag = refined
        .iter()
        .any(|&(b, q)| (q - q_min).abs() <= 1e-3 && (b - beta_hat).abs() > 10.0 * interval.refine_tol);
    let edge = 10.0 * interval.refine_tol;
    Ok(EstimateReport {
        method,
        beta_hat,
        objective_at_min: Some(q_min),
        stationarity: ms.dq_dbeta(beta_hat).ok().map(f64::abs),
        boundary_flag: (beta_hat - interval.lo).abs() <= edge || (interval.hi - beta_hat).abs() <= edge,
        multi_min_flag,
        skipped_grid_points: skipped,
        interval: Some(*interval),
    })
}

/// Newton steps on `∂Q̂/∂β` from the Brent point. Brent resolves β only to
/// about `√ε` relative to the objective's curvature; the gradient root is
/// sharper. Steps leaving `[a, b]` or not shrinking `|∂Q̂/∂β|` are rejected.
fn polish_stationary(ms: &MomentSystem, start: f64, a: f64, b: f64) -> f64 {
    let mut x = start;
    let Ok(mut g) = ms.dq_dbeta(x) else {
        return x;
    };
    for _ in 0..8 {
        let h = match ms.d2q_dbeta2(x) {
            Ok(h) if h > 0.0 => h,
            _ => break,
        };
        let next = x - g / h;
        if !(a..=b).contains(&next) {
            break;
        }
        let Ok(g_next) = ms.dq_dbeta(next) else {
            break;
        };
        if g_next.abs() >= g.abs() {
            break;
        }
        let done = (next - x).abs() <= 1e-15 * x.abs().max(1.0);
        x = next;
        g = g_next;
        if done || g == 0.0 {
            break;
        }
    }
    x
}

/// Fitted first stage `P D̄` and the TSLS denominator `D̄' P D̄`.
pub(crate) fn first_stage_projection(rd: &ResidualData) -> Result<(nalgebra::DVector<f64>, f64)> {
    let pi = least_squares(&rd.z_bar, &rd.d_bar)
        .ok_or_else(|| Error::SingularDesign("instrument cross-product Z̄'Z̄ is singular".into()))?;
    let fitted = &rd.z_bar * pi;
    let denom = fitted.dot(&rd.d_bar);
    if !(denom > 1e-14 * rd.d_bar.norm_squared()) {
        return Err(Error::ZeroFirstStage);
    }
    Ok((fitted, denom))
}

/// `β̂ = D̄'PȲ / D̄'PD̄` with `P` the projection on the columns of `Z̄`.
pub fn estimate_tsls(rd: &ResidualData) -> Result<EstimateReport> {
    let (fitted, denom) = first_stage_projection(rd)?;
    Ok(EstimateReport::closed_form(Method::Tsls, fitted.dot(&rd.y_bar) / denom))
}

/// Weighting used by the GMM baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GmmWeighting {
    /// Minimizes `ĝ'ĝ`.
    #[default]
    Identity,
    /// Re-minimizes with `Ω̂(β̂₁)⁻¹` after the identity step.
    TwoStep,
}

/// GMM with identity weighting, optionally followed by an efficient second step.
pub fn estimate_gmm_identity(ms: &MomentSystem, weighting: GmmWeighting) -> Result<EstimateReport> {
    gmm_as(ms, weighting, false)
}

fn gmm_as(ms: &MomentSystem, weighting: GmmWeighting, oracle: bool) -> Result<EstimateReport> {
    let szd = ms.szd();
    let ss = szd.norm_squared();
    if !(ss > 0.0) {
        return Err(Error::ZeroFirstStage);
    }
    let beta1 = szd.dot(ms.szy()) / ss;
    let (beta, method) = match weighting {
        GmmWeighting::Identity => (beta1, Method::GmmIdentity),
        GmmWeighting::TwoStep => {
            let w = ms.omega_hat(beta1)?;
            let denom = w.factor.inv_quad(szd);
            if !(denom > 0.0) {
                return Err(Error::ZeroFirstStage);
            }
            (w.factor.inv_bilinear(szd, ms.szy()) / denom, Method::GmmTwoStep)
        }
    };
    let method = if oracle { Method::OracleGmm } else { method };
    Ok(EstimateReport::closed_form(method, beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    Cue,
    Gmm(GmmWeighting),
}

/// Residualizes with the true nuisance functions (no folds) and runs the CUE
/// or GMM on the result. Returns the residuals too, for inference.
pub fn estimate_oracle(
    ds: &Dataset,
    truth: &dyn NuisanceFunctions,
    method: OracleMethod,
    interval: Option<&SearchInterval>,
) -> Result<(EstimateReport, ResidualData)> {
    let rd = residualize_unfolded(ds, &NuisanceFit::from_truth(ds, truth)?)?;
    let ms = MomentSystem::new(&rd);
    let report = match method {
        OracleMethod::Cue => {
            let interval = interval.copied().unwrap_or_else(|| SearchInterval::around_tsls(&rd));
            estimate_cue_as(&ms, &interval, Method::OracleCue)?
        }
        OracleMethod::Gmm(w) => gmm_as(&ms, w, true)?,
    };
    Ok((report, rd))
}
