//! Observations, fold partitions, residualization, and CSV ingestion.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::NuisanceFit;

/// Raw observations `(Y, D, Z, X)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    d: DVector<f64>,
    z: DMatrix<f64>,
    x: DMatrix<f64>,
}

impl Dataset {
    /// Validates shapes and finiteness. `x` may have zero columns.
    pub fn new(y: DVector<f64>, d: DVector<f64>, z: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::InvalidData(format!("need at least 2 observations, got {n}")));
        }
        if d.len() != n || z.nrows() != n || x.nrows() != n {
            return Err(Error::InvalidData(format!(
                "row counts disagree: y {}, d {}, z {}, x {}",
                n,
                d.len(),
                z.nrows(),
                x.nrows()
            )));
        }
        if z.ncols() == 0 {
            return Err(Error::InvalidData("at least one instrument column is required".into()));
        }
        let all_finite = y
            .iter()
            .chain(d.iter())
            .chain(z.iter())
            .chain(x.iter())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidData("non-finite entry".into()));
        }
        Ok(Dataset { y, d, z, x })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of instruments.
    pub fn m(&self) -> usize {
        self.z.ncols()
    }

    /// Number of covariates.
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Copy with a replaced outcome vector.
    pub fn with_outcome(&self, y: DVector<f64>) -> Result<Self> {
        Dataset::new(y, self.d.clone(), self.z.clone(), self.x.clone())
    }

    /// Copy with a replaced instrument matrix.
    pub fn with_instruments(&self, z: DMatrix<f64>) -> Result<Self> {
        Dataset::new(self.y.clone(), self.d.clone(), z, self.x.clone())
    }

    /// Writes the dataset as CSV with columns `y,d,z1..zm,x1..xp`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["y".to_string(), "d".to_string()];
        header.extend((1..=self.m()).map(|j| format!("z{j}")));
        header.extend((1..=self.p()).map(|j| format!("x{j}")));
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.n() {
            let mut rec = Vec::with_capacity(header.len());
            rec.push(self.y[i].to_string());
            rec.push(self.d[i].to_string());
            rec.extend(self.z.row(i).iter().map(|v| v.to_string()));
            rec.extend(self.x.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

/// Maps CSV header names onto the roles of a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub outcome: String,
    pub treatment: String,
    pub instruments: Vec<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
}

impl ColumnSchema {
    /// Schema matching the layout produced by [`Dataset::write_csv`].
    pub fn standard(m: usize, p: usize) -> Self {
        ColumnSchema {
            outcome: "y".into(),
            treatment: "d".into(),
            instruments: (1..=m).map(|j| format!("z{j}")).collect(),
            covariates: (1..=p).map(|j| format!("x{j}")).collect(),
        }
    }
}

/// Reads a comma-separated file with a header row. Any missing or
/// non-numeric cell in a mapped column is an error naming the 1-based data
/// row and the column.
pub fn load_csv(path: &Path, schema: &ColumnSchema) -> Result<Dataset> {
    if schema.instruments.is_empty() {
        return Err(Error::Config("schema names no instrument columns".into()));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let index_of = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let y_idx = index_of(&schema.outcome)?;
    let d_idx = index_of(&schema.treatment)?;
    let z_idx = schema
        .instruments
        .iter()
        .map(|c| index_of(c))
        .collect::<Result<Vec<_>>>()?;
    let x_idx = schema
        .covariates
        .iter()
        .map(|c| index_of(c))
        .collect::<Result<Vec<_>>>()?;

    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut z = Vec::new();
    let mut x = Vec::new();
    for (row0, rec) in rdr.records().enumerate() {
        let row = row0 + 1;
        let rec = rec.map_err(csv_err)?;
        let cell = |idx: usize, name: &str| -> Result<f64> {
            let raw = rec.get(idx).unwrap_or("");
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::NonNumeric {
                    row,
                    column: name.to_string(),
                    value: raw.to_string(),
                }),
            }
        };
        y.push(cell(y_idx, &schema.outcome)?);
        d.push(cell(d_idx, &schema.treatment)?);
        for (&idx, name) in z_idx.iter().zip(&schema.instruments) {
            z.push(cell(idx, name)?);
        }
        for (&idx, name) in x_idx.iter().zip(&schema.covariates) {
            x.push(cell(idx, name)?);
        }
    }
    let n = y.len();
    if n < 2 {
        return Err(Error::InvalidData(format!("need at least 2 observations, got {n}")));
    }
    let z = DMatrix::from_row_slice(n, z_idx.len(), &z);
    let x = DMatrix::from_row_slice(n, x_idx.len(), &x);
    Dataset::new(DVector::from_vec(y), DVector::from_vec(d), z, x)
}

/// K disjoint index sets covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPartition {
    folds: Vec<Vec<usize>>,
    fold_of: Vec<usize>,
}

impl FoldPartition {
    /// Builds a partition from an explicit fold assignment.
    pub fn from_assignment(fold_of: Vec<usize>, k: usize) -> Result<Self> {
        let n = fold_of.len();
        if k < 2 || k > n {
            return Err(Error::InvalidFolds { n, k });
        }
        let mut folds = vec![Vec::new(); k];
        for (i, &f) in fold_of.iter().enumerate() {
            if f >= k {
                return Err(Error::InvalidFolds { n, k });
            }
            folds[f].push(i);
        }
        if folds.iter().any(|f| f.is_empty()) {
            return Err(Error::InvalidFolds { n, k });
        }
        Ok(FoldPartition { folds, fold_of })
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    /// Sorted indices of fold `k`.
    pub fn fold(&self, k: usize) -> &[usize] {
        &self.folds[k]
    }

    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    /// Sorted indices outside fold `k`.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] != k).collect()
    }
}

/// Random K-fold partition, deterministic in `seed`. Fold sizes differ by at most one.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPartition> {
    if k < 2 || k > n {
        return Err(Error::InvalidFolds { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    FoldPartition::from_assignment(fold_of, k)
}

/// Residualized observations `(Ȳ, D̄, Z̄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualData {
    pub y_bar: DVector<f64>,
    pub d_bar: DVector<f64>,
    pub z_bar: DMatrix<f64>,
    /// Fold whose out-of-fold learner residualized each row; all zeros when
    /// no cross-fitting was involved.
    pub fold_of: Vec<usize>,
}

impl ResidualData {
    /// Residuals supplied directly, with no fold structure.
    pub fn from_parts(y_bar: DVector<f64>, d_bar: DVector<f64>, z_bar: DMatrix<f64>) -> Result<Self> {
        let n = y_bar.len();
        if n == 0 || d_bar.len() != n || z_bar.nrows() != n || z_bar.ncols() == 0 {
            return Err(Error::InvalidData("residual shapes disagree".into()));
        }
        if !y_bar
            .iter()
            .chain(d_bar.iter())
            .chain(z_bar.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::InvalidData("non-finite residual".into()));
        }
        Ok(ResidualData {
            y_bar,
            d_bar,
            z_bar,
            fold_of: vec![0; n],
        })
    }

    pub fn n(&self) -> usize {
        self.y_bar.len()
    }

    pub fn m(&self) -> usize {
        self.z_bar.ncols()
    }

    /// Applies `Z̄ → Z̄ A'` (row `i` becomes `A z̄_i`).
    pub fn transform_instruments(&self, a: &DMatrix<f64>) -> ResidualData {
        ResidualData {
            y_bar: self.y_bar.clone(),
            d_bar: self.d_bar.clone(),
            z_bar: &self.z_bar * a.transpose(),
            fold_of: self.fold_of.clone(),
        }
    }
}

/// Subtracts out-of-fold predictions: `Ȳ = Y − ℓ̂`, `D̄ = D − r̂`, `Z̄ = Z − α̂`.
pub fn residualize(ds: &Dataset, fits: &NuisanceFit, folds: &FoldPartition) -> Result<ResidualData> {
    let mut rd = residualize_unfolded(ds, fits)?;
    if folds.n() != ds.n() {
        return Err(Error::BadPrediction(folds.n().min(ds.n())));
    }
    rd.fold_of = folds.fold_of().to_vec();
    Ok(rd)
}

/// Residualization with predictions that do not come from a fold structure
/// (true nuisance functions or full-sample partialling).
pub fn residualize_unfolded(ds: &Dataset, fits: &NuisanceFit) -> Result<ResidualData> {
    let n = ds.n();
    let first_short = [fits.ell_hat.len(), fits.r_hat.len(), fits.alpha_hat.nrows()]
        .into_iter()
        .filter(|&len| len < n)
        .min();
    if let Some(len) = first_short {
        return Err(Error::BadPrediction(len));
    }
    if fits.alpha_hat.ncols() != ds.m() {
        return Err(Error::InvalidData(format!(
            "{} instrument predictions for {} instruments",
            fits.alpha_hat.ncols(),
            ds.m()
        )));
    }
    for i in 0..n {
        let ok = fits.ell_hat[i].is_finite()
            && fits.r_hat[i].is_finite()
            && fits.alpha_hat.row(i).iter().all(|v| v.is_finite());
        if !ok {
            return Err(Error::BadPrediction(i));
        }
    }
    Ok(ResidualData {
        y_bar: ds.y() - fits.ell_hat.rows(0, n),
        d_bar: ds.d() - fits.r_hat.rows(0, n),
        z_bar: ds.z() - fits.alpha_hat.rows(0, n),
        fold_of: vec![0; n],
    })
}
