//! Monte Carlo harness: designs, replication loop, aggregation and tables.
//!
//! Replication `r` (1-based) uses seed `base_seed + r` for everything it
//! draws, so results do not depend on scheduling. Aggregates are computed
//! from sorted per-replication values, which makes them bit-identical under
//! any permutation of the replications.

pub mod dgp;
mod table;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_folds, residualize, residualize_unfolded, Dataset, ResidualData};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_cue, estimate_gmm_identity, estimate_oracle, estimate_tsls, GmmWeighting, OracleMethod, SearchInterval,
};
use crate::inference::{gmm_standard_error, j_statistic, k_statistic, tsls_standard_error, variance_hat};
use crate::learners::{cross_fit, partial_out, LearnerSpec};
use crate::moments::MomentSystem;

pub use dgp::{
    covariate_dim, first_stage_coefficient, generate, generate_local_to_zero, generate_s1, generate_s2,
    population_concentration, DesignTruth, ACTIVE_COVARIATES, HIGH_DIM_P, LOW_DIM_P,
};
pub use table::{render_table, TableFormat};

/// Normal 97.5% quantile used for the Wald intervals.
pub const Z_975: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Three covariates, nonlinear nuisance functions.
    #[serde(rename = "s1_lowdim")]
    S1Lowdim,
    /// One hundred covariates, five of them active, linear nuisance functions.
    #[serde(rename = "s2_highdim")]
    S2Highdim,
    /// Instruments independent of the covariates, `π_j = √(cp/n)`.
    LocalToZero,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::S1Lowdim => "s1_lowdim",
            Scenario::S2Highdim => "s2_highdim",
            Scenario::LocalToZero => "local_to_zero",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "s1_lowdim" | "s1" => Ok(Scenario::S1Lowdim),
            "s2_highdim" | "s2" => Ok(Scenario::S2Highdim),
            "local_to_zero" => Ok(Scenario::LocalToZero),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }

    /// Spline-additive learner for the low-dimensional designs, lasso otherwise.
    pub fn default_learner(self) -> LearnerSpec {
        match self {
            Scenario::S1Lowdim | Scenario::LocalToZero => LearnerSpec::spline_default(),
            Scenario::S2Highdim => LearnerSpec::post_lasso_default(),
        }
    }
}

/// Estimators the harness can run on each replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Cue,
    Tsls,
    Gmm,
    OracleCue,
    OracleGmm,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::Cue,
        Estimator::Tsls,
        Estimator::Gmm,
        Estimator::OracleCue,
        Estimator::OracleGmm,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Estimator::Cue => "debiased-CUE",
            Estimator::Tsls => "TSLS",
            Estimator::Gmm => "debiased-GMM",
            Estimator::OracleCue => "oracle-CUE",
            Estimator::OracleGmm => "oracle-GMM",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Cue => "cue",
            Estimator::Tsls => "tsls",
            Estimator::Gmm => "gmm",
            Estimator::OracleCue => "oracle_cue",
            Estimator::OracleGmm => "oracle_gmm",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown estimator {name:?}")))
    }
}

fn default_rho() -> f64 {
    0.3
}

fn default_folds() -> usize {
    4
}

fn default_reps() -> usize {
    1
}

fn default_estimators() -> Vec<Estimator> {
    vec![Estimator::Cue, Estimator::Tsls, Estimator::Gmm]
}

/// One Monte Carlo cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub m: usize,
    pub cp: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default)]
    pub beta0: f64,
    /// Number of cross-fitting folds `K`.
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<Estimator>,
    /// Defaults to [`Scenario::default_learner`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learner: Option<LearnerSpec>,
    /// Correlation `c` between the noise of different instruments:
    /// `ε_ji = √c·e_i + √(1 − c)·u_ji`.
    #[serde(default)]
    pub noise_correlation: f64,
    #[serde(default)]
    pub gmm_weighting: GmmWeighting,
    /// CUE search interval; defaults to the TSLS-anchored interval per replication.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<SearchInterval>,
    /// Wall-clock timing per estimator. Off by default so metrics stay reproducible.
    #[serde(default)]
    pub record_runtime: bool,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, n: usize, m: usize, cp: f64) -> Self {
        ScenarioConfig {
            scenario,
            n,
            m,
            cp,
            rho: default_rho(),
            beta0: 0.0,
            folds: default_folds(),
            reps: default_reps(),
            base_seed: 0,
            estimators: default_estimators(),
            learner: None,
            noise_correlation: 0.0,
            gmm_weighting: GmmWeighting::Identity,
            interval: None,
            record_runtime: false,
        }
    }

    pub fn with_reps(mut self, reps: usize, base_seed: u64) -> Self {
        self.reps = reps;
        self.base_seed = base_seed;
        self
    }

    pub fn with_estimators(mut self, estimators: &[Estimator]) -> Self {
        self.estimators = estimators.to_vec();
        self
    }

    pub fn learner(&self) -> LearnerSpec {
        self.learner.clone().unwrap_or_else(|| self.scenario.default_learner())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.folds < 2 {
            return bad(format!("need at least 2 folds, got {}", self.folds));
        }
        if self.n < 2 * self.folds {
            return bad(format!("n = {} is below 2·K = {}", self.n, 2 * self.folds));
        }
        if self.m == 0 {
            return bad("need at least one instrument".into());
        }
        if !(self.cp > 0.0) || !self.cp.is_finite() {
            return bad(format!("concentration parameter must be positive, got {}", self.cp));
        }
        if self.reps == 0 {
            return bad("need at least one replication".into());
        }
        if !(self.rho.abs() <= 1.0) {
            return bad(format!("rho must lie in [−1, 1], got {}", self.rho));
        }
        if !(0.0..1.0).contains(&self.noise_correlation) {
            return bad(format!(
                "noise correlation must lie in [0, 1), got {}",
                self.noise_correlation
            ));
        }
        if !self.beta0.is_finite() {
            return bad("beta0 must be finite".into());
        }
        if self.estimators.is_empty() {
            return bad("estimator subset is empty".into());
        }
        if let Some(iv) = &self.interval {
            iv.validate()?;
        }
        self.learner().validate()
    }

    fn sorted_estimators(&self) -> Vec<Estimator> {
        let mut e = self.estimators.clone();
        e.sort();
        e.dedup();
        e
    }
}

/// One estimator's result on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOutcome {
    pub beta_hat: f64,
    /// Missing when inference failed (for example non-positive curvature).
    pub se: Option<f64>,
    /// Overidentification test, CUE variants with `m > 1` only.
    pub j_stat: Option<f64>,
    pub j_p: Option<f64>,
    /// Score test of `β = β₀`, CUE variants only.
    pub k_stat: Option<f64>,
    pub k_p: Option<f64>,
    pub boundary: bool,
    pub runtime_secs: Option<f64>,
}

impl EstimatorOutcome {
    fn point(beta_hat: f64, se: Option<f64>) -> Self {
        EstimatorOutcome {
            beta_hat,
            se,
            j_stat: None,
            j_p: None,
            k_stat: None,
            k_p: None,
            boundary: false,
            runtime_secs: None,
        }
    }

    pub fn covers(&self, beta0: f64) -> bool {
        self.se.is_some_and(|se| (self.beta_hat - beta0).abs() <= Z_975 * se)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub estimator: Estimator,
    pub outcome: std::result::Result<EstimatorOutcome, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    /// 1-based replication index.
    pub rep: usize,
    pub seed: u64,
    pub results: Vec<EstimatorResult>,
}

impl ReplicationRecord {
    pub fn get(&self, e: Estimator) -> Option<&EstimatorOutcome> {
        self.results
            .iter()
            .find(|r| r.estimator == e)
            .and_then(|r| r.outcome.as_ref().ok())
    }
}

/// Aggregates of one estimator over a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMetrics {
    pub estimator: Estimator,
    pub method: String,
    pub successes: usize,
    pub failure_count: usize,
    pub abs_mean_bias: f64,
    pub abs_median_bias: f64,
    /// Sample standard deviation (divisor `r − 1`); 0 with a single success.
    pub sd: f64,
    /// `√(mean se²)` over successes with a standard error.
    pub root_mean_evar: Option<f64>,
    /// Share of successes whose Wald interval covers `β₀`; a missing standard
    /// error counts as not covered.
    pub cov95: f64,
    /// 5%-level rejection rate of the J test (CUE variants, `m > 1`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_reject05: Option<f64>,
    /// 5%-level rejection rate of the K test of `β = β₀` (CUE variants).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_reject05: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_runtime: Option<f64>,
}

/// Aggregates of every requested estimator for one `(scenario, n, m, CP)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub scenario: Scenario,
    pub n: usize,
    pub m: usize,
    pub cp: f64,
    pub beta0: f64,
    pub reps: usize,
    pub base_seed: u64,
    pub learner: String,
    pub rows: Vec<EstimatorMetrics>,
}

impl CellMetrics {
    pub fn row(&self, e: Estimator) -> Option<&EstimatorMetrics> {
        self.rows.iter().find(|r| r.estimator == e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRun {
    pub metrics: CellMetrics,
    pub replications: Vec<ReplicationRecord>,
}

/// Runs every replication of the cell on the current rayon pool.
pub fn run_cell(cfg: &ScenarioConfig) -> Result<CellRun> {
    let records = run_replications(cfg, 1..=cfg.reps)?;
    let metrics = aggregate(cfg, &records)?;
    Ok(CellRun {
        metrics,
        replications: records,
    })
}

/// [`run_cell`] on a dedicated pool of `workers` threads.
pub fn run_cell_with_workers(cfg: &ScenarioConfig, workers: usize) -> Result<CellRun> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| run_cell(cfg))
}

/// Runs the given replication indices (1-based) in parallel, returned in index order.
pub fn run_replications(cfg: &ScenarioConfig, reps: impl IntoIterator<Item = usize>) -> Result<Vec<ReplicationRecord>> {
    cfg.validate()?;
    let learner = cfg.learner();
    let reps: Vec<usize> = reps.into_iter().collect();
    Ok(reps.par_iter().map(|&r| run_replication(cfg, &learner, r)).collect())
}

fn timed<T>(on: bool, f: impl FnOnce() -> Result<T>) -> (Result<T>, Option<f64>) {
    let start = on.then(Instant::now);
    let out = f();
    (out, start.map(|s| s.elapsed().as_secs_f64()))
}

/// One replication: draws data with seed `base_seed + rep` and runs every requested estimator.
pub fn run_replication(cfg: &ScenarioConfig, learner: &LearnerSpec, rep: usize) -> ReplicationRecord {
    let seed = cfg.base_seed.wrapping_add(rep as u64);
    let estimators = cfg.sorted_estimators();
    let data = generate(cfg, seed);
    let results = match data {
        Err(e) => estimators
            .iter()
            .map(|&estimator| EstimatorResult {
                estimator,
                outcome: Err(e.to_string()),
            })
            .collect(),
        Ok((ds, truth)) => {
            let needs_cross_fit = estimators.iter().any(|e| matches!(e, Estimator::Cue | Estimator::Gmm));
            let (crossfitted, cf_time) = if needs_cross_fit {
                let (rd, t) = timed(cfg.record_runtime, || {
                    let folds = make_folds(ds.n(), cfg.folds, derive_seed(seed, 1))?;
                    let fit = cross_fit(&ds, &folds, learner, derive_seed(seed, 2))?;
                    residualize(&ds, &fit, &folds)
                });
                (Some(rd), t)
            } else {
                (None, None)
            };
            estimators
                .iter()
                .map(|&estimator| {
                    let (outcome, t) = timed(cfg.record_runtime, || match estimator {
                        Estimator::Cue => run_cue(cfg, shared(&crossfitted)?),
                        Estimator::Gmm => run_gmm(cfg, shared(&crossfitted)?),
                        Estimator::Tsls => run_tsls(&ds),
                        Estimator::OracleCue => run_oracle(cfg, &ds, truth.as_ref(), OracleMethod::Cue),
                        Estimator::OracleGmm => {
                            run_oracle(cfg, &ds, truth.as_ref(), OracleMethod::Gmm(cfg.gmm_weighting))
                        }
                    });
                    let outcome = outcome.map(|mut o| {
                        if cfg.record_runtime {
                            let shared_time = match estimator {
                                Estimator::Cue | Estimator::Gmm => cf_time.unwrap_or(0.0),
                                _ => 0.0,
                            };
                            o.runtime_secs = Some(t.unwrap_or(0.0) + shared_time);
                        }
                        o
                    });
                    EstimatorResult {
                        estimator,
                        outcome: outcome.map_err(|e| e.to_string()),
                    }
                })
                .collect()
        }
    };
    ReplicationRecord { rep, seed, results }
}

fn shared(rd: &Option<Result<ResidualData>>) -> Result<&ResidualData> {
    match rd {
        Some(Ok(rd)) => Ok(rd),
        Some(Err(e)) => Err(Error::InvalidData(format!("cross-fitting failed: {e}"))),
        None => Err(Error::InvalidData("cross-fitting was not run".into())),
    }
}

/// Independent stream seeds derived from the replication seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn cue_outcome(cfg: &ScenarioConfig, ms: &MomentSystem, beta_hat: f64, boundary: bool) -> EstimatorOutcome {
    let mut out = EstimatorOutcome::point(beta_hat, variance_hat(ms, beta_hat).ok().map(|v| v.se));
    out.boundary = boundary;
    if let Ok(j) = j_statistic(ms, beta_hat) {
        if !j.just_identified {
            out.j_stat = Some(j.stat);
            out.j_p = Some(j.p_value);
        }
    }
    if let Ok((k, p)) = k_statistic(ms, cfg.beta0) {
        out.k_stat = Some(k);
        out.k_p = Some(p);
    }
    out
}

fn run_cue(cfg: &ScenarioConfig, rd: &ResidualData) -> Result<EstimatorOutcome> {
    let ms = MomentSystem::new(rd);
    let interval = cfg.interval.unwrap_or_else(|| SearchInterval::around_tsls(rd));
    let est = estimate_cue(&ms, &interval)?;
    Ok(cue_outcome(cfg, &ms, est.beta_hat, est.boundary_flag))
}

fn run_gmm(cfg: &ScenarioConfig, rd: &ResidualData) -> Result<EstimatorOutcome> {
    let ms = MomentSystem::new(rd);
    let est = estimate_gmm_identity(&ms, cfg.gmm_weighting)?;
    let se = gmm_standard_error(&ms, est.beta_hat, cfg.gmm_weighting).ok();
    Ok(EstimatorOutcome::point(est.beta_hat, se))
}

/// Conventional TSLS: full-sample linear partialling of `Y`, `D` and `Z` on `X`.
fn run_tsls(ds: &Dataset) -> Result<EstimatorOutcome> {
    let fit = partial_out(ds, &LearnerSpec::Linear, 0)?;
    let rd = residualize_unfolded(ds, &fit)?;
    let est = estimate_tsls(&rd)?;
    let se = tsls_standard_error(&rd, est.beta_hat).ok();
    Ok(EstimatorOutcome::point(est.beta_hat, se))
}

fn run_oracle(
    cfg: &ScenarioConfig,
    ds: &Dataset,
    truth: &DesignTruth,
    method: OracleMethod,
) -> Result<EstimatorOutcome> {
    let (est, rd) = estimate_oracle(ds, truth, method, cfg.interval.as_ref())?;
    let ms = MomentSystem::new(&rd);
    Ok(match method {
        OracleMethod::Cue => cue_outcome(cfg, &ms, est.beta_hat, est.boundary_flag),
        OracleMethod::Gmm(w) => EstimatorOutcome::point(est.beta_hat, gmm_standard_error(&ms, est.beta_hat, w).ok()),
    })
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn median_sorted(v: &[f64]) -> f64 {
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn rate(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

/// Aggregates replication records into cell metrics. Errors when some
/// requested estimator failed on every replication.
pub fn aggregate(cfg: &ScenarioConfig, records: &[ReplicationRecord]) -> Result<CellMetrics> {
    if records.is_empty() {
        return Err(Error::Config("no replications to aggregate".into()));
    }
    let mut rows = Vec::new();
    for estimator in cfg.sorted_estimators() {
        let mut ok = Vec::new();
        let mut failures = 0;
        let mut first_error = None;
        for rec in records {
            match rec
                .results
                .iter()
                .find(|r| r.estimator == estimator)
                .map(|r| &r.outcome)
            {
                Some(Ok(o)) => ok.push(o),
                Some(Err(e)) => {
                    failures += 1;
                    first_error.get_or_insert_with(|| e.clone());
                }
                None => failures += 1,
            }
        }
        if ok.is_empty() {
            return Err(Error::AllReplicationsFailed(format!(
                "{}: {}",
                estimator.label(),
                first_error.unwrap_or_else(|| "not run".into())
            )));
        }
        let beta = sorted(ok.iter().map(|o| o.beta_hat).collect());
        let r = beta.len() as f64;
        let mean: f64 = beta.iter().sum::<f64>() / r;
        let sd = if beta.len() > 1 {
            let dev = sorted(beta.iter().map(|b| (b - mean).powi(2)).collect());
            (dev.iter().sum::<f64>() / (r - 1.0)).sqrt()
        } else {
            0.0
        };
        let evar = sorted(ok.iter().filter_map(|o| o.se.map(|s| s * s)).collect());
        let root_mean_evar = (!evar.is_empty()).then(|| (evar.iter().sum::<f64>() / evar.len() as f64).sqrt());
        let covered = ok.iter().filter(|o| o.covers(cfg.beta0)).count();
        let j: Vec<f64> = ok.iter().filter_map(|o| o.j_p).collect();
        let k: Vec<f64> = ok.iter().filter_map(|o| o.k_p).collect();
        let mean_runtime = cfg.record_runtime.then(|| {
            let t = sorted(ok.iter().filter_map(|o| o.runtime_secs).collect());
            t.iter().sum::<f64>() / t.len().max(1) as f64
        });
        rows.push(EstimatorMetrics {
            estimator,
            method: estimator.label().to_string(),
            successes: ok.len(),
            failure_count: failures,
            abs_mean_bias: (mean - cfg.beta0).abs(),
            abs_median_bias: (median_sorted(&beta) - cfg.beta0).abs(),
            sd,
            root_mean_evar,
            cov95: covered as f64 / r,
            j_reject05: rate(j.iter().filter(|&&p| p < 0.05).count(), j.len()),
            k_reject05: rate(k.iter().filter(|&&p| p < 0.05).count(), k.len()),
            mean_runtime,
        });
    }
    Ok(CellMetrics {
        scenario: cfg.scenario,
        n: cfg.n,
        m: cfg.m,
        cp: cfg.cp,
        beta0: cfg.beta0,
        reps: records.len(),
        base_seed: cfg.base_seed,
        learner: cfg.learner().name().to_string(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(rep: usize, betas: &[(Estimator, std::result::Result<f64, &str>)]) -> ReplicationRecord {
        ReplicationRecord {
            rep,
            seed: rep as u64,
            results: betas
                .iter()
                .map(|(e, b)| EstimatorResult {
                    estimator: *e,
                    outcome: b.map(|b| EstimatorOutcome::point(b, Some(0.6))).map_err(String::from),
                })
                .collect(),
        }
    }

    #[test]
    fn hand_aggregation() {
        let mut cfg = ScenarioConfig::new(Scenario::S1Lowdim, 100, 2, 10.0).with_estimators(&[Estimator::Tsls]);
        cfg.beta0 = 2.0;
        let recs: Vec<_> = [1.0, 2.0, 3.0]
            .iter()
            .enumerate()
            .map(|(i, &b)| record(i + 1, &[(Estimator::Tsls, Ok(b))]))
            .collect();
        let m = aggregate(&cfg, &recs).unwrap();
        let row = m.row(Estimator::Tsls).unwrap();
        assert_eq!(row.abs_mean_bias, 0.0);
        assert_eq!(row.abs_median_bias, 0.0);
        assert!((row.sd - 1.0).abs() < 1e-15);
        // |β̂ − 2| ≤ 1.96·0.6 = 1.176 holds for all three
        assert_eq!(row.cov95, 1.0);
        assert!((row.root_mean_evar.unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn failures_are_counted_and_excluded() {
        let cfg =
            ScenarioConfig::new(Scenario::S1Lowdim, 100, 2, 10.0).with_estimators(&[Estimator::Cue, Estimator::Tsls]);
        let recs = vec![
            record(1, &[(Estimator::Cue, Ok(0.5)), (Estimator::Tsls, Ok(0.1))]),
            record(2, &[(Estimator::Cue, Err("singular")), (Estimator::Tsls, Ok(0.3))]),
        ];
        let m = aggregate(&cfg, &recs).unwrap();
        let cue = m.row(Estimator::Cue).unwrap();
        assert_eq!((cue.successes, cue.failure_count), (1, 1));
        assert_eq!(cue.abs_mean_bias, 0.5);
        assert_eq!(cue.sd, 0.0);

        let recs = vec![record(1, &[(Estimator::Cue, Err("x")), (Estimator::Tsls, Ok(0.1))])];
        assert!(matches!(aggregate(&cfg, &recs), Err(Error::AllReplicationsFailed(_))));
    }

    #[test]
    fn aggregation_ignores_replication_order() {
        let cfg = ScenarioConfig::new(Scenario::S1Lowdim, 100, 2, 10.0).with_estimators(&[Estimator::Tsls]);
        let values = [0.3, -1.7, 0.11, 2.5, 1e-3, 0.77, -0.2];
        let recs: Vec<_> = values
            .iter()
            .enumerate()
            .map(|(i, &b)| record(i + 1, &[(Estimator::Tsls, Ok(b))]))
            .collect();
        let mut rev = recs.clone();
        rev.reverse();
        rev.swap(1, 4);
        assert_eq!(aggregate(&cfg, &recs).unwrap(), aggregate(&cfg, &rev).unwrap());
    }

    #[test]
    fn config_validation() {
        let ok = ScenarioConfig::new(Scenario::S1Lowdim, 100, 2, 10.0);
        assert!(ok.validate().is_ok());
        let mut c = ok.clone();
        c.n = 7;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.cp = 0.0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.estimators.clear();
        assert!(c.validate().is_err());
        let mut c = ok;
        c.reps = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_from_json_uses_defaults() {
        let cfg: ScenarioConfig = serde_json::from_str(r#"{"scenario":"s2_highdim","n":200,"m":3,"cp":15}"#).unwrap();
        assert_eq!(cfg.rho, 0.3);
        assert_eq!(cfg.folds, 4);
        assert_eq!(cfg.learner().name(), "post-lasso");
    }

    #[test]
    fn seeds_differ_across_streams() {
        assert_ne!(derive_seed(5, 1), derive_seed(5, 2));
        assert_ne!(derive_seed(5, 1), derive_seed(6, 1));
    }

    #[test]
    fn small_cell_is_deterministic_and_scheduling_free() {
        let cfg = ScenarioConfig::new(Scenario::S1Lowdim, 200, 3, 30.0)
            .with_reps(3, 40)
            .with_estimators(&Estimator::ALL);
        let a = run_cell_with_workers(&cfg, 1).unwrap();
        let b = run_cell_with_workers(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.metrics.rows.len(), 5);
        assert_eq!(a.replications[2].seed, 43);
    }
}
