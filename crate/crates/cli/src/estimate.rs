use std::fmt::Write as _;
use std::path::PathBuf;

use dcue::data::residualize_unfolded;
use dcue::estimators::{estimate_gmm_identity, estimate_tsls, GmmWeighting};
use dcue::inference::{first_stage_f, gmm_standard_error, infer, tsls_standard_error, FirstStageF};
use dcue::learners::partial_out;
use dcue::simulate::{derive_seed, Z_975};
use dcue::{
    cross_fit, estimate_cue, load_csv, make_folds, residualize, ColumnSchema, EstimateReport, InferenceReport,
    LearnerSpec, MomentSystem, SearchInterval,
};
use serde::Serialize;
use serde_json::json;

use crate::config::{EstimateSection, RunHeader};
use crate::failure::{CliResult, Failure};
use crate::{write_output, EstimateArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstMethod {
    Cue,
    Tsls,
    Gmm,
}

impl EstMethod {
    fn parse(name: &str) -> CliResult<Self> {
        match name.trim() {
            "cue" => Ok(EstMethod::Cue),
            "tsls" => Ok(EstMethod::Tsls),
            "gmm" => Ok(EstMethod::Gmm),
            other => Err(Failure::config(format!(
                "unknown method {other:?} (expected cue, tsls or gmm)"
            ))),
        }
    }
}

/// Fully resolved `estimate` configuration.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateRun {
    pub data: PathBuf,
    pub schema: ColumnSchema,
    pub learner: String,
    pub folds: usize,
    pub methods: Vec<EstMethod>,
    pub seed: u64,
    pub beta_star: f64,
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl EstimateRun {
    pub fn resolve(args: EstimateArgs, file: EstimateSection) -> CliResult<Self> {
        let data = args
            .data
            .or(file.data)
            .ok_or_else(|| Failure::config("estimate needs --data"))?;
        if !data.is_file() {
            return Err(Failure::config(format!("data file {} does not exist", data.display())));
        }
        let instruments = args.instruments.or(file.instruments).unwrap_or_default();
        if instruments.is_empty() {
            return Err(Failure::config("estimate needs at least one --instruments column"));
        }
        let methods = match args.method.or(file.method) {
            Some(names) => names
                .iter()
                .map(|n| EstMethod::parse(n))
                .collect::<CliResult<Vec<_>>>()?,
            None => vec![EstMethod::Cue, EstMethod::Tsls, EstMethod::Gmm],
        };
        if methods.is_empty() {
            return Err(Failure::config("empty --method list"));
        }
        let learner = args.learner.or(file.learner).unwrap_or_else(|| "spline".into());
        LearnerSpec::from_name(&learner)?;
        let folds = args.folds.or(file.folds).unwrap_or(4);
        if folds < 2 {
            return Err(Failure::config(format!("need at least 2 folds, got {folds}")));
        }
        let beta_star = args.beta_star.or(file.beta_star).unwrap_or(0.0);
        if !beta_star.is_finite() {
            return Err(Failure::config("--beta-star must be finite"));
        }
        Ok(EstimateRun {
            data,
            schema: ColumnSchema {
                outcome: args.outcome.or(file.outcome).unwrap_or_else(|| "y".into()),
                treatment: args.treatment.or(file.treatment).unwrap_or_else(|| "d".into()),
                instruments,
                covariates: args.covariates.or(file.covariates).unwrap_or_default(),
            },
            learner,
            folds,
            methods,
            seed: args.seed.or(file.seed).unwrap_or(0),
            beta_star,
            out: args.out.or(file.out),
        })
    }
}

/// One estimator's row of the report.
#[derive(Debug, Clone, Serialize)]
pub struct MethodResult {
    pub method: EstMethod,
    pub label: &'static str,
    pub beta_hat: f64,
    pub se: Option<f64>,
    pub ci95: Option<(f64, f64)>,
    pub estimate: EstimateReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inference: Option<InferenceReport>,
}

#[derive(Debug, Clone)]
pub struct EstimateOutput {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub learner: String,
    pub first_stage_f: FirstStageF,
    pub results: Vec<MethodResult>,
    pub nuisance: Vec<dcue::learners::ModelSummary>,
}

fn with_se(method: EstMethod, estimate: EstimateReport, se: Option<f64>) -> MethodResult {
    MethodResult {
        method,
        label: estimate.method.label(),
        beta_hat: estimate.beta_hat,
        se,
        ci95: se.map(|s| (estimate.beta_hat - Z_975 * s, estimate.beta_hat + Z_975 * s)),
        estimate,
        inference: None,
    }
}

pub fn compute(run: &EstimateRun) -> CliResult<EstimateOutput> {
    let ds = load_csv(&run.data, &run.schema)?;
    let learner = LearnerSpec::from_name(&run.learner)?;
    let folds = make_folds(ds.n(), run.folds, derive_seed(run.seed, 1))?;
    let fit = cross_fit(&ds, &folds, &learner, derive_seed(run.seed, 2))?;
    let rd = residualize(&ds, &fit, &folds)?;
    let ms = MomentSystem::new(&rd);

    let mut results = Vec::new();
    for &method in &run.methods {
        let row = match method {
            EstMethod::Cue => {
                let est = estimate_cue(&ms, &SearchInterval::around_tsls(&rd))?;
                let inf = infer(&ms, &rd, est.beta_hat, run.beta_star)?;
                let mut row = with_se(method, est, Some(inf.se));
                row.ci95 = Some(inf.ci95);
                row.inference = Some(inf);
                row
            }
            EstMethod::Tsls => {
                let linear = partial_out(&ds, &LearnerSpec::Linear, 0)?;
                let plain = residualize_unfolded(&ds, &linear)?;
                let est = estimate_tsls(&plain)?;
                let se = tsls_standard_error(&plain, est.beta_hat)?;
                with_se(method, est, Some(se))
            }
            EstMethod::Gmm => {
                let est = estimate_gmm_identity(&ms, GmmWeighting::Identity)?;
                let se = gmm_standard_error(&ms, est.beta_hat, GmmWeighting::Identity)?;
                with_se(method, est, Some(se))
            }
        };
        results.push(row);
    }
    Ok(EstimateOutput {
        n: ds.n(),
        m: ds.m(),
        p: ds.p(),
        learner: learner.name().to_string(),
        first_stage_f: first_stage_f(&rd)?,
        results,
        nuisance: fit.summaries,
    })
}

/// JSON report. The J test is dropped, and `just_identified` set, when `m = 1`.
pub fn report_json(run: &EstimateRun, out: &EstimateOutput) -> serde_json::Value {
    let header = RunHeader::new("estimate", run.seed, run);
    let mut results = serde_json::to_value(&out.results).expect("results serialize");
    for row in results.as_array_mut().into_iter().flatten() {
        if let Some(inf) = row.get_mut("inference").and_then(|v| v.as_object_mut()) {
            let just = inf["j"]["just_identified"].as_bool().unwrap_or(false);
            if just {
                inf.remove("j");
            }
            inf.insert("just_identified".into(), json!(just));
        }
    }
    json!({
        "run": header,
        "data": { "n": out.n, "instruments": out.m, "covariates": out.p },
        "learner": out.learner,
        "first_stage_f": out.first_stage_f,
        "results": results,
        "nuisance": out.nuisance,
    })
}

fn fmt_f(f: &FirstStageF) -> String {
    if f.infinite {
        "inf".into()
    } else {
        format!("{:.3}", f.value)
    }
}

pub fn summary_text(run: &EstimateRun, out: &EstimateOutput) -> String {
    let mut s = String::new();
    let header = RunHeader::new("estimate", run.seed, run);
    let _ = writeln!(s, "# {}", header.to_line());
    let _ = writeln!(
        s,
        "observations {}, instruments {}, covariates {}; learner {}, folds {}",
        out.n, out.m, out.p, out.learner, run.folds
    );
    let _ = writeln!(s, "first-stage F: {}", fmt_f(&out.first_stage_f));
    for r in &out.results {
        let se = r.se.map_or("NA".into(), |v| format!("{v:.4}"));
        let ci = r.ci95.map_or("NA".into(), |(lo, hi)| format!("[{lo:.4}, {hi:.4}]"));
        let _ = writeln!(s, "{:<14} estimate {:.4}  se {se}  95% CI {ci}", r.label, r.beta_hat);
        if let Some(inf) = &r.inference {
            if inf.j.just_identified {
                let _ = writeln!(s, "  J: omitted, just-identified (m = 1)");
            } else {
                let _ = writeln!(s, "  J = {:.3} (df {}, p = {:.4})", inf.j.stat, inf.j.df, inf.j.p_value);
            }
            let _ = writeln!(
                s,
                "  K test of beta = {}: {:.3} (p = {:.4})",
                inf.beta_star, inf.k_stat, inf.k_p
            );
            if r.estimate.boundary_flag {
                let _ = writeln!(s, "  warning: minimizer on the search-interval boundary");
            }
            if r.estimate.multi_min_flag {
                let _ = writeln!(s, "  warning: several near-equal local minima");
            }
        }
    }
    s
}

pub fn run(args: EstimateArgs, file: EstimateSection) -> CliResult<()> {
    let run = EstimateRun::resolve(args, file)?;
    let out = compute(&run)?;
    let text = summary_text(&run, &out);
    if let Some(dir) = &run.out {
        let json = serde_json::to_string_pretty(&report_json(&run, &out)).expect("report serializes") + "\n";
        write_output(dir, "estimate.json", &json)?;
        write_output(dir, "estimate.txt", &text)?;
    }
    print!("{text}");
    Ok(())
}
