use nalgebra::{DMatrix, DVector};

use super::{ModelSummary, PredictiveModel};
use crate::error::{Error, Result};
use crate::linalg::{column_means, SpdFactor};

/// Ordinary least squares with intercept. A rank-deficient design switches to
/// ridge with penalty `1e-8 · trace(X̃'X̃)/p` on the centered design, noted in
/// the summary.
pub fn fit_linear(x: &DMatrix<f64>, t: &DVector<f64>) -> Result<(PredictiveModel, ModelSummary)> {
    let mut out = fit_linear_many(x, std::slice::from_ref(t))?;
    Ok(out.pop().expect("one target"))
}

enum Solver {
    Qr { q: DMatrix<f64>, r: DMatrix<f64> },
    Ridge { factor: SpdFactor, penalty: f64 },
}

pub(super) fn fit_linear_many(
    x: &DMatrix<f64>,
    targets: &[DVector<f64>],
) -> Result<Vec<(PredictiveModel, ModelSummary)>> {
    let n = x.nrows();
    let p = x.ncols();
    let means = column_means(x);
    let mut xc = x.clone();
    for j in 0..p {
        let mu = means[j];
        xc.column_mut(j).add_scalar_mut(-mu);
    }

    let solver = full_rank_qr(&xc).map_or_else(
        || {
            let gram = xc.transpose() * &xc;
            let penalty = 1e-8 * gram.trace().max(f64::MIN_POSITIVE) / p as f64;
            let mut reg = gram;
            for j in 0..p {
                reg[(j, j)] += penalty;
            }
            SpdFactor::new(&reg)
                .map(|factor| Solver::Ridge { factor, penalty })
                .map_err(|_| Error::SingularDesign("linear learner: ridge fallback failed".into()))
        },
        |(q, r)| Ok(Solver::Qr { q, r }),
    )?;

    targets
        .iter()
        .map(|t| {
            if t.len() != n {
                return Err(Error::InvalidData("target length differs from design rows".into()));
            }
            let t_mean = t.mean();
            let tc = t.add_scalar(-t_mean);
            let mut summary = ModelSummary::new("linear");
            let coefs = match &solver {
                Solver::Qr { q, r } => {
                    let qty = q.transpose() * &tc;
                    r.solve_upper_triangular(&qty)
                        .ok_or_else(|| Error::SingularDesign("triangular solve failed".into()))?
                }
                Solver::Ridge { factor, penalty } => {
                    summary.penalty = Some(*penalty);
                    summary.notes.push("rank-deficient design: ridge fallback".into());
                    factor.solve(&(xc.transpose() * &tc))
                }
            };
            let intercept = t_mean - means.dot(&coefs);
            summary.basis_size = Some(p);
            Ok((PredictiveModel::Linear { intercept, coefs }, summary))
        })
        .collect()
}

fn full_rank_qr(xc: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let p = xc.ncols();
    if xc.nrows() < p + 1 {
        return None;
    }
    let qr = xc.clone().qr();
    let r = qr.r();
    let max_r = r.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !(max_r > 0.0) || r.diagonal().iter().any(|v| v.abs() <= 1e-10 * max_r) {
        return None;
    }
    Some((qr.q(), r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_linear_target_is_recovered() {
        let x = DMatrix::from_fn(20, 1, |i, _| i as f64 * 0.37 - 2.0);
        let t = x.column(0).map(|v| 2.0 * v + 1.0);
        let (model, summary) = fit_linear(&x, &t).unwrap();
        match model {
            PredictiveModel::Linear { intercept, coefs } => {
                assert!((intercept - 1.0).abs() < 1e-10);
                assert!((coefs[0] - 2.0).abs() < 1e-10);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(summary.notes.is_empty());
    }

    #[test]
    fn constant_target_gives_intercept_only() {
        let x = DMatrix::from_fn(10, 2, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.1 * i as f64);
        let t = DVector::from_element(10, 4.5);
        let (model, _) = fit_linear(&x, &t).unwrap();
        match model {
            PredictiveModel::Linear { intercept, coefs } => {
                assert!((intercept - 4.5).abs() < 1e-12);
                assert!(coefs.amax() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicated_column_engages_ridge_fallback() {
        let x = DMatrix::from_fn(12, 2, |i, _| i as f64);
        let t = DVector::from_fn(12, |i, _| 3.0 * i as f64 - 1.0);
        let (model, summary) = fit_linear(&x, &t).unwrap();
        assert!(summary.penalty.is_some());
        let pred = model.predict(&x);
        assert!(pred.iter().all(|v| v.is_finite()));
        assert!((pred - &t).amax() < 1e-4);
    }
}
