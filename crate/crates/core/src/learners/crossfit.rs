use nalgebra::{DMatrix, DVector};

use super::{fit_targets, select_entries, select_rows, LearnerSpec, ModelSummary, NuisanceFunctions};
use crate::data::{Dataset, FoldPartition};
use crate::error::{Error, Result};

/// Out-of-fold predictions of `(ℓ₀, r₀, α₀)` for every observation.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFit {
    pub ell_hat: DVector<f64>,
    pub r_hat: DVector<f64>,
    pub alpha_hat: DMatrix<f64>,
    pub summaries: Vec<ModelSummary>,
}

impl NuisanceFit {
    pub fn from_predictions(ell_hat: DVector<f64>, r_hat: DVector<f64>, alpha_hat: DMatrix<f64>) -> Self {
        NuisanceFit {
            ell_hat,
            r_hat,
            alpha_hat,
            summaries: Vec::new(),
        }
    }

    /// Evaluates true nuisance functions at every covariate row.
    pub fn from_truth(ds: &Dataset, truth: &dyn NuisanceFunctions) -> Result<Self> {
        let n = ds.n();
        let m = ds.m();
        if truth.m() != m {
            return Err(Error::InvalidData(format!(
                "true propensity scores have {} columns, dataset has {m} instruments",
                truth.m()
            )));
        }
        let mut ell = DVector::zeros(n);
        let mut r = DVector::zeros(n);
        let mut alpha = DMatrix::zeros(n, m);
        let mut row = vec![0.0; ds.p()];
        let mut a = vec![0.0; m];
        for i in 0..n {
            for (j, v) in row.iter_mut().enumerate() {
                *v = ds.x()[(i, j)];
            }
            ell[i] = truth.ell(&row);
            r[i] = truth.r(&row);
            truth.alpha(&row, &mut a);
            for j in 0..m {
                alpha[(i, j)] = a[j];
            }
        }
        Ok(NuisanceFit::from_predictions(ell, r, alpha))
    }
}

fn target_names(m: usize) -> Vec<String> {
    let mut names = vec!["outcome".to_string(), "treatment".to_string()];
    names.extend((1..=m).map(|j| format!("instrument {j}")));
    names
}

/// Cross-fitting: for each fold `k`, trains `2 + m` models on the complement of
/// fold `k` (outcome, treatment, each instrument on `X`) and predicts the rows
/// of fold `k`. An oracle spec evaluates its true functions instead.
///
/// `seed` feeds learner-internal randomness; fold `k` uses `seed + k`.
pub fn cross_fit(ds: &Dataset, folds: &FoldPartition, spec: &LearnerSpec, seed: u64) -> Result<NuisanceFit> {
    spec.validate()?;
    if folds.n() != ds.n() {
        return Err(Error::InvalidData(format!(
            "fold partition covers {} rows, dataset has {}",
            folds.n(),
            ds.n()
        )));
    }
    if let LearnerSpec::Oracle(truth) = spec {
        let mut fit = NuisanceFit::from_truth(ds, truth.as_ref())?;
        for k in 0..folds.k() {
            for name in target_names(ds.m()) {
                let mut s = ModelSummary::new("oracle");
                s.fold = k;
                s.target = name;
                fit.summaries.push(s);
            }
        }
        return Ok(fit);
    }

    let n = ds.n();
    let m = ds.m();
    let mut ell = DVector::zeros(n);
    let mut r = DVector::zeros(n);
    let mut alpha = DMatrix::zeros(n, m);
    let mut summaries = Vec::with_capacity(folds.k() * (2 + m));
    let names = target_names(m);
    let all_targets = columns_as_targets(ds);

    for k in 0..folds.k() {
        let train = folds.complement(k);
        let test = folds.fold(k);
        let x_train = select_rows(ds.x(), &train);
        let x_test = select_rows(ds.x(), test);
        let targets: Vec<DVector<f64>> = all_targets.iter().map(|t| select_entries(t, &train)).collect();
        let models = fit_many_tagged(spec, &x_train, &targets, &names, k, seed.wrapping_add(k as u64))?;
        for (c, (model, mut summary)) in models.into_iter().enumerate() {
            let pred = model.predict(&x_test);
            for (row, &i) in test.iter().enumerate() {
                match c {
                    0 => ell[i] = pred[row],
                    1 => r[i] = pred[row],
                    j => alpha[(i, j - 2)] = pred[row],
                }
            }
            summary.fold = k;
            summary.target = names[c].clone();
            summaries.push(summary);
        }
    }
    Ok(NuisanceFit {
        ell_hat: ell,
        r_hat: r,
        alpha_hat: alpha,
        summaries,
    })
}

/// Full-sample partialling out: trains on all rows and predicts the same rows.
/// With the linear learner this is the covariate adjustment of conventional
/// two-stage least squares.
pub fn partial_out(ds: &Dataset, spec: &LearnerSpec, seed: u64) -> Result<NuisanceFit> {
    spec.validate()?;
    if let LearnerSpec::Oracle(truth) = spec {
        return NuisanceFit::from_truth(ds, truth.as_ref());
    }
    let names = target_names(ds.m());
    let targets = columns_as_targets(ds);
    let models = fit_many_tagged(spec, ds.x(), &targets, &names, 0, seed)?;
    let n = ds.n();
    let mut alpha = DMatrix::zeros(n, ds.m());
    let mut ell = DVector::zeros(n);
    let mut r = DVector::zeros(n);
    let mut summaries = Vec::new();
    for (c, (model, mut summary)) in models.into_iter().enumerate() {
        let pred = model.predict(ds.x());
        match c {
            0 => ell = pred,
            1 => r = pred,
            j => alpha.set_column(j - 2, &pred),
        }
        summary.target = names[c].clone();
        summaries.push(summary);
    }
    Ok(NuisanceFit {
        ell_hat: ell,
        r_hat: r,
        alpha_hat: alpha,
        summaries,
    })
}

fn columns_as_targets(ds: &Dataset) -> Vec<DVector<f64>> {
    let mut out = vec![ds.y().clone(), ds.d().clone()];
    out.extend(ds.z().column_iter().map(|c| c.into_owned()));
    out
}

fn fit_many_tagged(
    spec: &LearnerSpec,
    x: &DMatrix<f64>,
    targets: &[DVector<f64>],
    names: &[String],
    fold: usize,
    seed: u64,
) -> Result<Vec<(super::PredictiveModel, ModelSummary)>> {
    match fit_targets(spec, x, targets, seed) {
        Ok(models) => Ok(models),
        Err(batch_err) => {
            // find the offending target so the error names it
            for (t, name) in targets.iter().zip(names) {
                if let Err(e) = fit_targets(spec, x, std::slice::from_ref(t), seed) {
                    return Err(Error::learner(fold, name.clone(), e));
                }
            }
            Err(Error::learner(fold, "all", batch_err))
        }
    }
}
