//! Additive penalized cubic B-spline regression ("GAM-lite").
//!
//! Each covariate gets a cubic B-spline block with interior knots at equally
//! spaced sample quantiles and a second-difference coefficient penalty. Blocks
//! are centered on the training means and reparametrized to drop the constant
//! direction, so the intercept is the training mean of the target. One shared
//! smoothing multiplier per target is picked by GCV. Outside the training range
//! each block is extended linearly from the boundary.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::penalized::{geometric_grid, PenalizedDesign};
use super::{ModelSummary, PredictiveModel};
use crate::error::{Error, Result};

const DEGREE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplineConfig {
    /// Interior knots per covariate.
    pub knots: usize,
    pub grid_size: usize,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
}

impl Default for SplineConfig {
    fn default() -> Self {
        SplineConfig {
            knots: 10,
            grid_size: 30,
            lambda_lo: 1e-6,
            lambda_hi: 1e4,
        }
    }
}

impl SplineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.knots == 0 || self.grid_size == 0 || !(self.lambda_lo > 0.0) || !(self.lambda_hi >= self.lambda_lo) {
            return Err(Error::Config(format!("invalid spline configuration {self:?}")));
        }
        Ok(())
    }
}

/// Cubic B-spline basis on a clamped knot vector.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    knots: Vec<f64>,
}

impl BSplineBasis {
    /// Clamped knot vector `[lo ×4, interior…, hi ×4]`.
    pub fn new(lo: f64, hi: f64, interior: &[f64]) -> Self {
        let mut knots = vec![lo; DEGREE + 1];
        knots.extend_from_slice(interior);
        knots.extend(std::iter::repeat_n(hi, DEGREE + 1));
        BSplineBasis { knots }
    }

    pub fn size(&self) -> usize {
        self.knots.len() - DEGREE - 1
    }

    fn lo(&self) -> f64 {
        self.knots[0]
    }

    fn hi(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    /// Knot span `μ` with `t[μ] ≤ x < t[μ+1]`, clamped to the valid range.
    fn span(&self, x: f64) -> usize {
        let q = self.size();
        if x >= self.knots[q] {
            return q - 1;
        }
        if x <= self.knots[DEGREE] {
            return DEGREE;
        }
        // largest μ in [DEGREE, q-1] with t[μ] <= x
        let mut lo = DEGREE;
        let mut hi = q;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.knots[mid] <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Nonzero basis values of degree `p` at `x` on `span` (indices `span-p..=span`).
    fn nonzero(&self, span: usize, x: f64, p: usize) -> [f64; DEGREE + 1] {
        let t = &self.knots;
        let mut n = [0.0; DEGREE + 1];
        let mut left = [0.0; DEGREE + 1];
        let mut right = [0.0; DEGREE + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }

    /// All basis values at `x` (inside the boundary knots), written into `out`.
    pub fn eval(&self, x: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let span = self.span(x);
        let vals = self.nonzero(span, x, DEGREE);
        for (k, v) in vals.iter().enumerate() {
            out[span - DEGREE + k] = *v;
        }
    }

    /// First derivatives of all basis functions at `x`.
    pub fn eval_derivative(&self, x: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let t = &self.knots;
        let span = self.span(x);
        let lower = self.nonzero(span, x, DEGREE - 1);
        // lower[k] is N_{span-2+k, 2}
        let n2 = |i: usize| -> f64 {
            if i + (DEGREE - 1) >= span && i <= span {
                lower[i + (DEGREE - 1) - span]
            } else {
                0.0
            }
        };
        for i in (span - DEGREE)..=span {
            let d1 = t[i + DEGREE] - t[i];
            let d2 = t[i + DEGREE + 1] - t[i + 1];
            let a = if d1 > 0.0 { n2(i) / d1 } else { 0.0 };
            let b = if d2 > 0.0 { n2(i + 1) / d2 } else { 0.0 };
            out[i] = DEGREE as f64 * (a - b);
        }
    }

    /// Basis values with linear extension beyond the boundary knots.
    pub fn eval_extended(&self, x: f64, out: &mut [f64]) {
        let edge = if x < self.lo() {
            self.lo()
        } else if x > self.hi() {
            self.hi()
        } else {
            return self.eval(x, out);
        };
        self.eval(edge, out);
        let mut deriv = vec![0.0; out.len()];
        self.eval_derivative(edge, &mut deriv);
        for (o, d) in out.iter_mut().zip(&deriv) {
            *o += (x - edge) * d;
        }
    }
}

/// How one covariate enters the additive model.
#[derive(Debug, Clone, PartialEq)]
enum Block {
    /// Constant in training: no contribution.
    Dropped,
    /// Too few distinct values for a spline: centered linear term.
    Linear { mean: f64 },
    Spline {
        basis: BSplineBasis,
        /// Training means of the raw basis columns.
        center: DVector<f64>,
    },
}

impl Block {
    fn width(&self) -> usize {
        match self {
            Block::Dropped => 0,
            Block::Linear { .. } => 1,
            Block::Spline { basis, .. } => basis.size() - 1,
        }
    }

    /// Reparametrized block columns at `x`: `Cᵀ(b(x) − center)` where `C`
    /// maps `q-1` free coefficients onto sum-to-zero differences.
    fn row(&self, x: f64, scratch: &mut Vec<f64>, out: &mut [f64]) {
        match self {
            Block::Dropped => {}
            Block::Linear { mean } => out[0] = x - mean,
            Block::Spline { basis, center } => {
                scratch.resize(basis.size(), 0.0);
                basis.eval_extended(x, scratch);
                for (s, c) in scratch.iter_mut().zip(center.iter()) {
                    *s -= c;
                }
                contrast_apply(scratch, out);
            }
        }
    }
}

/// `out = Cᵀ v` for the difference contrast `C` (q × (q−1)), `C[k,k] = 1`,
/// `C[k+1,k] = −1`.
fn contrast_apply(v: &[f64], out: &mut [f64]) {
    for k in 0..out.len() {
        out[k] = v[k] - v[k + 1];
    }
}

/// Penalty `Cᵀ ΔᵀΔ C` for a block of `q` raw coefficients.
fn contrast_penalty(q: usize) -> DMatrix<f64> {
    let mut diff = DMatrix::zeros(q.saturating_sub(2), q);
    for r in 0..q.saturating_sub(2) {
        diff[(r, r)] = 1.0;
        diff[(r, r + 1)] = -2.0;
        diff[(r, r + 2)] = 1.0;
    }
    let mut c = DMatrix::zeros(q, q - 1);
    for k in 0..q - 1 {
        c[(k, k)] = 1.0;
        c[(k + 1, k)] = -1.0;
    }
    let dc = diff * c;
    dc.transpose() * dc
}

/// Fitted additive model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveModel {
    intercept: f64,
    blocks: Vec<Block>,
    coefs: DVector<f64>,
}

impl AdditiveModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut row = vec![0.0; self.coefs.len()];
        let mut scratch = Vec::new();
        let mut offset = 0;
        for (j, block) in self.blocks.iter().enumerate() {
            let w = block.width();
            block.row(x[j], &mut scratch, &mut row[offset..offset + w]);
            offset += w;
        }
        self.intercept + row.iter().zip(self.coefs.iter()).map(|(a, b)| a * b).sum::<f64>()
    }
}

struct AdditiveDesign {
    blocks: Vec<Block>,
    design: PenalizedDesign,
    notes: Vec<String>,
}

fn build_design(x: &DMatrix<f64>, cfg: &SplineConfig) -> AdditiveDesign {
    let n = x.nrows();
    let mut blocks = Vec::with_capacity(x.ncols());
    let mut notes = Vec::new();
    for j in 0..x.ncols() {
        let mut sorted: Vec<f64> = x.column(j).iter().copied().collect();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let mut distinct = sorted.clone();
        distinct.dedup();
        let block = match distinct.len() {
            0 | 1 => Block::Dropped,
            2 | 3 => Block::Linear {
                mean: sorted.iter().sum::<f64>() / n as f64,
            },
            d => {
                let mut k = cfg.knots;
                if d <= k {
                    k = d - 1;
                    notes.push(format!(
                        "covariate {}: knots reduced to {k} ({d} distinct values)",
                        j + 1
                    ));
                }
                let (lo, hi) = (sorted[0], sorted[n - 1]);
                let mut interior: Vec<f64> = (1..=k)
                    .map(|i| quantile_sorted(&sorted, i as f64 / (k + 1) as f64))
                    .filter(|&v| v > lo && v < hi)
                    .collect();
                interior.dedup();
                let basis = BSplineBasis::new(lo, hi, &interior);
                let q = basis.size();
                let mut center = DVector::zeros(q);
                let mut vals = vec![0.0; q];
                for i in 0..n {
                    basis.eval(x[(i, j)], &mut vals);
                    for (c, v) in center.iter_mut().zip(&vals) {
                        *c += v;
                    }
                }
                center /= n as f64;
                Block::Spline { basis, center }
            }
        };
        blocks.push(block);
    }

    let width: usize = blocks.iter().map(Block::width).sum();
    let mut w = DMatrix::zeros(n, width);
    let mut penalty = DMatrix::zeros(width, width);
    let mut scratch = Vec::new();
    let mut row = vec![0.0; width];
    for i in 0..n {
        let mut offset = 0;
        for (j, block) in blocks.iter().enumerate() {
            let bw = block.width();
            block.row(x[(i, j)], &mut scratch, &mut row[offset..offset + bw]);
            offset += bw;
        }
        for (c, v) in row.iter().enumerate() {
            w[(i, c)] = *v;
        }
    }
    let mut offset = 0;
    for block in &blocks {
        let bw = block.width();
        match block {
            Block::Spline { basis, .. } => {
                let s = contrast_penalty(basis.size());
                penalty.view_mut((offset, offset), (bw, bw)).copy_from(&s);
            }
            Block::Linear { .. } => {
                // keeps collinear dummies solvable without visibly shrinking them
                let ss: f64 = w.column(offset).norm_squared();
                penalty[(offset, offset)] = 1e-10 * ss.max(1.0);
            }
            Block::Dropped => {}
        }
        offset += bw;
    }
    AdditiveDesign {
        blocks,
        design: PenalizedDesign::new(w, penalty),
        notes,
    }
}

/// Linear interpolation quantile (type 7) of sorted data.
fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Additive cubic-spline fit with GCV smoothing selection.
pub fn fit_spline_additive(
    x: &DMatrix<f64>,
    t: &DVector<f64>,
    cfg: &SplineConfig,
) -> Result<(PredictiveModel, ModelSummary)> {
    let mut out = fit_spline_many(x, std::slice::from_ref(t), cfg)?;
    Ok(out.pop().expect("one target"))
}

pub(super) fn fit_spline_many(
    x: &DMatrix<f64>,
    targets: &[DVector<f64>],
    cfg: &SplineConfig,
) -> Result<Vec<(PredictiveModel, ModelSummary)>> {
    cfg.validate()?;
    let AdditiveDesign { blocks, design, notes } = build_design(x, cfg);
    if design.ncols() == 0 {
        return Ok(targets
            .iter()
            .map(|t| {
                let mut s = ModelSummary::new("spline-additive");
                s.notes.push("all covariates constant: training mean".into());
                (PredictiveModel::Constant(t.mean()), s)
            })
            .collect());
    }
    let candidates = design.candidates(&geometric_grid(cfg.lambda_lo, cfg.lambda_hi, cfg.grid_size));
    if candidates.is_empty() {
        return Err(Error::DegenerateGcv);
    }
    targets
        .iter()
        .map(|t| {
            let t_mean = t.mean();
            let fit = design.fit(&candidates, &t.add_scalar(-t_mean))?;
            let mut summary = ModelSummary::new("spline-additive");
            summary.penalty = Some(fit.multiplier);
            summary.basis_size = Some(design.ncols());
            summary.notes = notes.clone();
            summary.notes.push(format!("edf {:.2}", fit.edf));
            let model = AdditiveModel {
                intercept: t_mean,
                blocks: blocks.clone(),
                coefs: fit.coefs,
            };
            Ok((PredictiveModel::Additive(model), summary))
        })
        .collect()
}
