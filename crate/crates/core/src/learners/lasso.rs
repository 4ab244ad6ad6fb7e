//! L1-penalized least squares by cyclic coordinate descent.
//!
//! The solver works on covariance updates: with standardized columns it only
//! needs the Gram matrix `X̃'X̃/n` and the score `X̃'(t − t̄)/n`. Those are
//! assembled from per-chunk sufficient statistics, so every internal
//! cross-validation split and every target trained on the same covariates
//! reuses a single pass over the data.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelSummary, PredictiveModel};
use crate::error::{Error, Result};
use crate::linalg::{column_means, SpdFactor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    /// Internal cross-validation folds for choosing λ.
    pub cv_folds: usize,
    pub n_lambda: usize,
    /// Smallest grid value as a fraction of λ_max.
    pub lambda_min_ratio: f64,
    pub max_sweeps: usize,
    /// Convergence: largest absolute coefficient change in a sweep.
    pub tol: f64,
    /// Skip cross-validation and fit at this λ.
    pub lambda: Option<f64>,
    /// Refit least squares on the selected support (post-lasso), removing
    /// the shrinkage of the retained coefficients.
    pub refit: bool,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            cv_folds: 10,
            n_lambda: 100,
            lambda_min_ratio: 1e-4,
            max_sweeps: 10_000,
            tol: 1e-7,
            lambda: None,
            refit: false,
        }
    }
}

impl LassoConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.cv_folds >= 2
            && self.n_lambda >= 1
            && self.lambda_min_ratio > 0.0
            && self.lambda_min_ratio < 1.0
            && self.max_sweeps >= 1
            && self.tol > 0.0
            && self.lambda.is_none_or(|l| l >= 0.0 && l.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid lasso configuration {self:?}")))
        }
    }
}

/// Lasso solution on the raw covariate scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub intercept: f64,
    pub coefs: DVector<f64>,
    pub lambda: f64,
}

impl LassoFit {
    pub fn support(&self) -> Vec<usize> {
        (0..self.coefs.len()).filter(|&j| self.coefs[j] != 0.0).collect()
    }
}

/// Covariate sufficient statistics of one row chunk, on data pre-centered by
/// the full training mean.
#[derive(Clone)]
struct XStats {
    n: f64,
    sx: DVector<f64>,
    sxx: DMatrix<f64>,
}

#[derive(Clone)]
struct TStats {
    st: f64,
    stt: f64,
    sxt: DVector<f64>,
}

impl XStats {
    fn minus(&self, other: &XStats) -> XStats {
        XStats {
            n: self.n - other.n,
            sx: &self.sx - &other.sx,
            sxx: &self.sxx - &other.sxx,
        }
    }
}

impl TStats {
    fn minus(&self, other: &TStats) -> TStats {
        TStats {
            st: self.st - other.st,
            stt: self.stt - other.stt,
            sxt: &self.sxt - &other.sxt,
        }
    }
}

/// Standardized problem for one subset: `G = X̃'X̃/n`, `c = X̃'(t − t̄)/n`.
struct Standardized {
    keep: Vec<usize>,
    mean: DVector<f64>,
    scale: DVector<f64>,
    gram: DMatrix<f64>,
}

impl Standardized {
    fn new(xs: &XStats) -> Self {
        let n = xs.n;
        let p = xs.sx.len();
        let mean = &xs.sx / n;
        let mut keep = Vec::new();
        let mut scale = Vec::new();
        for j in 0..p {
            let css = xs.sxx[(j, j)] - n * mean[j] * mean[j];
            let var = css / (n - 1.0).max(1.0);
            let raw = xs.sxx[(j, j)] / n;
            if var > 1e-20 * raw.max(1e-300) && var > 0.0 {
                keep.push(j);
                scale.push(var.sqrt());
            }
        }
        let k = keep.len();
        let gram = DMatrix::from_fn(k, k, |a, b| {
            let (ja, jb) = (keep[a], keep[b]);
            (xs.sxx[(ja, jb)] - n * mean[ja] * mean[jb]) / (scale[a] * scale[b] * n)
        });
        Standardized {
            keep,
            mean,
            scale: DVector::from_vec(scale),
            gram,
        }
    }

    fn score(&self, xs: &XStats, ts: &TStats) -> (f64, DVector<f64>) {
        let t_mean = ts.st / xs.n;
        let c = DVector::from_fn(self.keep.len(), |a, _| {
            let j = self.keep[a];
            (ts.sxt[j] - xs.n * self.mean[j] * t_mean) / (self.scale[a] * xs.n)
        });
        (t_mean, c)
    }
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Cyclic coordinate descent at one λ, warm-started from `b`; `grad` holds
/// `c − G b` on entry and exit. Full sweeps alternate with sweeps over the
/// current support until a full sweep moves no coefficient by `tol` or more.
fn coordinate_descent(
    gram: &DMatrix<f64>,
    b: &mut DVector<f64>,
    grad: &mut DVector<f64>,
    lambda: f64,
    cfg: &LassoConfig,
) -> Result<()> {
    let p = b.len();
    let g = gram.as_slice();
    let update = |j: usize, b: &mut DVector<f64>, grad: &mut DVector<f64>| -> f64 {
        let col = &g[j * p..(j + 1) * p];
        let gjj = col[j];
        let old = b[j];
        let new = soft_threshold(grad[j] + gjj * old, lambda) / gjj;
        if new == old {
            return 0.0;
        }
        let delta = new - old;
        b[j] = new;
        for (gi, ci) in grad.as_mut_slice().iter_mut().zip(col) {
            *gi -= delta * ci;
        }
        delta.abs()
    };
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let full_change = (0..p).fold(0.0f64, |acc, j| acc.max(update(j, b, grad)));
        if full_change < cfg.tol {
            return Ok(());
        }
        let active: Vec<usize> = (0..p).filter(|&j| b[j] != 0.0).collect();
        while sweeps < cfg.max_sweeps {
            sweeps += 1;
            let change = active.iter().fold(0.0f64, |acc, &j| acc.max(update(j, b, grad)));
            if change < cfg.tol {
                break;
            }
        }
    }
    Err(Error::LassoNonConvergence {
        lambda,
        sweeps: cfg.max_sweeps,
    })
}

/// The cross-validation path stops once the pooled held-out error has stayed
/// more than `CV_STOP_MARGIN` (relative) above its running minimum for
/// `CV_STOP_RUN` consecutive grid points.
const CV_STOP_MARGIN: f64 = 0.02;
const CV_STOP_RUN: usize = 5;

/// One internal cross-validation split, solved along the λ grid.
struct CvPath<'a> {
    std: &'a Standardized,
    t_mean: f64,
    b: DVector<f64>,
    grad: DVector<f64>,
    held_x: &'a XStats,
    held_t: &'a TStats,
}

/// Runs all splits in lockstep down the grid; returns the λ with the smallest
/// pooled held-out squared error.
fn cv_select(paths: &mut [CvPath<'_>], lambdas: &[f64], p: usize, cfg: &LassoConfig) -> Result<f64> {
    let mut best = (0, f64::INFINITY);
    let mut above = 0;
    for (l, &lambda) in lambdas.iter().enumerate() {
        let mut total = 0.0;
        for path in paths.iter_mut() {
            coordinate_descent(&path.std.gram, &mut path.b, &mut path.grad, lambda, cfg)?;
            let (b0, coefs) = unstandardize(path.std, path.t_mean, &path.b, p);
            total += held_out_sse(path.held_x, path.held_t, b0, &coefs);
        }
        if total < best.1 {
            best = (l, total);
            above = 0;
        } else if total > (1.0 + CV_STOP_MARGIN) * best.1 {
            above += 1;
            if above >= CV_STOP_RUN {
                break;
            }
        } else {
            above = 0;
        }
    }
    Ok(lambdas[best.0])
}

/// Maps standardized coefficients to `(intercept, raw coefs)` in the
/// pre-centered coordinates; the caller shifts the intercept back.
fn unstandardize(std: &Standardized, t_mean: f64, b: &DVector<f64>, p: usize) -> (f64, DVector<f64>) {
    let mut coefs = DVector::zeros(p);
    for (a, &j) in std.keep.iter().enumerate() {
        coefs[j] = b[a] / std.scale[a];
    }
    let intercept = t_mean - std.mean.dot(&coefs);
    (intercept, coefs)
}

/// Lasso with λ chosen by internal V-fold cross-validation (or fixed via
/// `cfg.lambda`).
pub fn fit_lasso(x: &DMatrix<f64>, t: &DVector<f64>, cfg: &LassoConfig, seed: u64) -> Result<LassoFit> {
    let mut fits = fit_lasso_raw(x, std::slice::from_ref(t), cfg, seed)?;
    Ok(fits.pop().expect("one target"))
}

pub(super) fn fit_lasso_many(
    x: &DMatrix<f64>,
    targets: &[DVector<f64>],
    cfg: &LassoConfig,
    seed: u64,
) -> Result<Vec<(PredictiveModel, ModelSummary)>> {
    let fits = fit_lasso_raw(x, targets, cfg, seed)?;
    Ok(fits
        .into_iter()
        .map(|f| {
            let mut s = ModelSummary::new(if cfg.refit { "post-lasso" } else { "lasso" });
            s.penalty = Some(f.lambda);
            s.nonzero = Some(f.support().len());
            s.basis_size = Some(f.coefs.len());
            (
                PredictiveModel::Linear {
                    intercept: f.intercept,
                    coefs: f.coefs,
                },
                s,
            )
        })
        .collect())
}

fn fit_lasso_raw(x: &DMatrix<f64>, targets: &[DVector<f64>], cfg: &LassoConfig, seed: u64) -> Result<Vec<LassoFit>> {
    cfg.validate()?;
    let n = x.nrows();
    let p = x.ncols();
    let center = column_means(x);
    let mut xc = x.clone();
    for j in 0..p {
        xc.column_mut(j).add_scalar_mut(-center[j]);
    }

    let chunks: Vec<Vec<usize>> = if cfg.lambda.is_some() {
        vec![(0..n).collect()]
    } else {
        let v = cfg.cv_folds.min(n);
        if v < 2 {
            return Err(Error::InvalidData(format!(
                "lasso cross-validation needs at least 2 rows, got {n}"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut chunks = vec![Vec::new(); v];
        for (pos, &i) in order.iter().enumerate() {
            chunks[pos % v].push(i);
        }
        chunks
    };
    let chunk_rows: Vec<DMatrix<f64>> = chunks.iter().map(|c| super::select_rows(&xc, c)).collect();
    let chunk_x: Vec<XStats> = chunk_rows
        .iter()
        .map(|xr| XStats {
            n: xr.nrows() as f64,
            sx: DVector::from_iterator(p, xr.column_iter().map(|c| c.sum())),
            sxx: xr.transpose() * xr,
        })
        .collect();
    let total_x = XStats {
        n: n as f64,
        sx: DVector::from_iterator(p, xc.column_iter().map(|c| c.sum())),
        sxx: xc.transpose() * &xc,
    };
    let full_std = Standardized::new(&total_x);
    let cv_std: Vec<(XStats, Standardized)> = if chunks.len() > 1 {
        chunk_x
            .iter()
            .map(|cx| {
                let train = total_x.minus(cx);
                let s = Standardized::new(&train);
                (train, s)
            })
            .collect()
    } else {
        Vec::new()
    };

    targets
        .iter()
        .map(|t| {
            if t.len() != n {
                return Err(Error::InvalidData("target length differs from design rows".into()));
            }
            let chunk_t: Vec<TStats> = chunks
                .iter()
                .zip(&chunk_rows)
                .map(|(idx, xr)| {
                    let tv = super::select_entries(t, idx);
                    TStats {
                        st: tv.sum(),
                        stt: tv.norm_squared(),
                        sxt: xr.transpose() * &tv,
                    }
                })
                .collect();
            let total_t = TStats {
                st: t.sum(),
                stt: t.norm_squared(),
                sxt: xc.transpose() * t,
            };
            let (t_mean, c_full) = full_std.score(&total_x, &total_t);

            let lambda = match cfg.lambda {
                Some(l) => l,
                None => {
                    let lambda_max = c_full.amax();
                    if lambda_max <= 0.0 {
                        // target orthogonal to every covariate: the null model at any λ
                        0.0
                    } else {
                        let lambdas = lambda_grid(lambda_max, cfg);
                        let train_t: Vec<TStats> = chunk_t.iter().map(|ct| total_t.minus(ct)).collect();
                        let mut paths: Vec<CvPath> = cv_std
                            .iter()
                            .enumerate()
                            .map(|(v, (train_x, std))| {
                                let (t_mean, c) = std.score(train_x, &train_t[v]);
                                CvPath {
                                    std,
                                    t_mean,
                                    b: DVector::zeros(std.keep.len()),
                                    grad: c,
                                    held_x: &chunk_x[v],
                                    held_t: &chunk_t[v],
                                }
                            })
                            .collect();
                        cv_select(&mut paths, &lambdas, p, cfg)?
                    }
                }
            };

            let mut b = DVector::zeros(full_std.keep.len());
            let mut grad = c_full.clone();
            // walk a short warm-start path from λ_max down to the chosen λ
            let lambda_max = c_full.amax();
            if lambda < lambda_max {
                for l in lambda_grid(lambda_max, cfg).into_iter().take_while(|&l| l > lambda) {
                    coordinate_descent(&full_std.gram, &mut b, &mut grad, l, cfg)?;
                }
                coordinate_descent(&full_std.gram, &mut b, &mut grad, lambda, cfg)?;
            }
            if cfg.refit {
                refit_support(&full_std.gram, &c_full, &mut b);
            }
            let (b0, coefs) = unstandardize(&full_std, t_mean, &b, p);
            Ok(LassoFit {
                intercept: b0 - center.dot(&coefs),
                coefs,
                lambda,
            })
        })
        .collect()
}

/// Least squares restricted to the support of `b`; `b` is left unchanged
/// when the support's Gram block is singular.
fn refit_support(gram: &DMatrix<f64>, c: &DVector<f64>, b: &mut DVector<f64>) {
    let support: Vec<usize> = (0..b.len()).filter(|&j| b[j] != 0.0).collect();
    if support.is_empty() {
        return;
    }
    let k = support.len();
    let g = DMatrix::from_fn(k, k, |a, bb| gram[(support[a], support[bb])]);
    let rhs = DVector::from_fn(k, |a, _| c[support[a]]);
    if let Ok(f) = SpdFactor::new(&g) {
        let sol = f.solve(&rhs);
        for (a, &j) in support.iter().enumerate() {
            b[j] = sol[a];
        }
    }
}

/// `Σ (t_i − b₀ − x_i'b)²` over a chunk, from its sufficient statistics.
fn held_out_sse(xs: &XStats, ts: &TStats, b0: f64, coefs: &DVector<f64>) -> f64 {
    let p = coefs.len();
    let sxx = xs.sxx.as_slice();
    let nz: Vec<(usize, f64)> = coefs.iter().copied().enumerate().filter(|&(_, c)| c != 0.0).collect();
    let mut quad = 0.0;
    let mut lin_t = 0.0;
    let mut lin_x = 0.0;
    for &(a, ca) in &nz {
        lin_t += ca * ts.sxt[a];
        lin_x += ca * xs.sx[a];
        let col = &sxx[a * p..(a + 1) * p];
        quad += ca * nz.iter().map(|&(b, cb)| col[b] * cb).sum::<f64>();
    }
    let sse = ts.stt - 2.0 * b0 * ts.st - 2.0 * lin_t + xs.n * b0 * b0 + 2.0 * b0 * lin_x + quad;
    sse.max(0.0)
}

fn lambda_grid(lambda_max: f64, cfg: &LassoConfig) -> Vec<f64> {
    let k = cfg.n_lambda;
    if k == 1 {
        return vec![lambda_max];
    }
    let ratio = cfg.lambda_min_ratio.ln();
    (0..k)
        .map(|i| lambda_max * (ratio * i as f64 / (k - 1) as f64).exp())
        .collect()
}
