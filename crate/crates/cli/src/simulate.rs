use std::path::PathBuf;

use dcue::simulate::{render_table, TableFormat};
use dcue::simulate::{run_cell_with_workers, CellRun, Estimator, Scenario, ScenarioConfig};
use dcue::LearnerSpec;
use serde::Serialize;
use serde_json::json;

use crate::config::{RunHeader, SimulateSection};
use crate::failure::{CliResult, Failure};
use crate::{write_output, SimulateArgs};

/// Fully resolved `simulate` configuration. The worker count and output
/// directory are left out of the reproducibility header because they do not
/// affect any number written.
#[derive(Debug, Clone, Serialize)]
pub struct SimulateRun {
    pub scenario: Scenario,
    pub n: Vec<usize>,
    pub m: Vec<usize>,
    pub cp: Vec<f64>,
    pub reps: usize,
    pub seed: u64,
    pub learner: String,
    pub folds: usize,
    pub estimators: Vec<Estimator>,
    pub rho: f64,
    pub beta0: f64,
    pub noise_correlation: f64,
    pub format: String,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip)]
    pub workers: usize,
}

fn non_empty<T>(v: Vec<T>, what: &str) -> CliResult<Vec<T>> {
    if v.is_empty() {
        Err(Failure::config(format!("empty --{what} list")))
    } else {
        Ok(v)
    }
}

impl SimulateRun {
    pub fn resolve(args: SimulateArgs, file: SimulateSection) -> CliResult<Self> {
        let scenario = Scenario::from_name(&args.scenario.or(file.scenario).unwrap_or_else(|| "s1_lowdim".into()))?;
        let learner = args
            .learner
            .or(file.learner)
            .unwrap_or_else(|| scenario.default_learner().name().to_string());
        LearnerSpec::from_name(&learner)?;
        let estimators = match args.method.or(file.method) {
            Some(names) => names
                .iter()
                .map(|n| Estimator::from_name(n.trim()))
                .collect::<dcue::Result<Vec<_>>>()?,
            None => vec![Estimator::Cue, Estimator::Tsls, Estimator::Gmm],
        };
        let format = args.format.or(file.format).unwrap_or_else(|| "markdown".into());
        TableFormat::from_name(&format)?;
        let workers = args
            .workers
            .or(file.workers)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if workers == 0 {
            return Err(Failure::config("--workers must be positive"));
        }
        let run = SimulateRun {
            scenario,
            n: non_empty(args.n.or(file.n).unwrap_or_else(|| vec![1000]), "n")?,
            m: non_empty(args.m.or(file.m).unwrap_or_else(|| vec![15]), "m")?,
            cp: non_empty(args.cp.or(file.cp).unwrap_or_else(|| vec![30.0]), "cp")?,
            reps: args.reps.or(file.reps).unwrap_or(100),
            seed: args.seed.or(file.seed).unwrap_or(0),
            learner,
            folds: args.folds.or(file.folds).unwrap_or(4),
            estimators: non_empty(estimators, "method")?,
            rho: file.rho.unwrap_or(0.3),
            beta0: file.beta0.unwrap_or(0.0),
            noise_correlation: file.noise_correlation.unwrap_or(0.0),
            format,
            out: args.out.or(file.out).unwrap_or_else(|| PathBuf::from("dcue-output")),
            workers,
        };
        for cell in run.cells() {
            cell.validate()?;
        }
        Ok(run)
    }

    /// Grid cells in output order: `n`, then `CP`, then `m`.
    pub fn cells(&self) -> Vec<ScenarioConfig> {
        let learner = LearnerSpec::from_name(&self.learner).ok();
        let mut out = Vec::new();
        for &n in &self.n {
            for &cp in &self.cp {
                for &m in &self.m {
                    let mut c = ScenarioConfig::new(self.scenario, n, m, cp)
                        .with_reps(self.reps, self.seed)
                        .with_estimators(&self.estimators);
                    c.learner = learner.clone();
                    c.folds = self.folds;
                    c.rho = self.rho;
                    c.beta0 = self.beta0;
                    c.noise_correlation = self.noise_correlation;
                    out.push(c);
                }
            }
        }
        out
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Raw per-replication estimates, one row per (cell, replication, estimator).
pub fn raw_csv(header_line: &str, runs: &[CellRun]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "scenario",
        "n",
        "m",
        "cp",
        "rep",
        "seed",
        "estimator",
        "status",
        "beta_hat",
        "se",
        "j_stat",
        "j_p",
        "k_stat",
        "k_p",
        "boundary",
        "error",
    ])
    .expect("in-memory write");
    for run in runs {
        let c = &run.metrics;
        for rec in &run.replications {
            for r in &rec.results {
                let head = [
                    c.scenario.name().to_string(),
                    c.n.to_string(),
                    c.m.to_string(),
                    c.cp.to_string(),
                    rec.rep.to_string(),
                    rec.seed.to_string(),
                    r.estimator.name().to_string(),
                ];
                let tail = match &r.outcome {
                    Ok(o) => [
                        "ok".to_string(),
                        o.beta_hat.to_string(),
                        opt(o.se),
                        opt(o.j_stat),
                        opt(o.j_p),
                        opt(o.k_stat),
                        opt(o.k_p),
                        o.boundary.to_string(),
                        String::new(),
                    ],
                    Err(e) => {
                        let mut t: [String; 9] = Default::default();
                        t[0] = "failed".into();
                        t[8] = e.clone();
                        t
                    }
                };
                w.write_record(head.iter().chain(tail.iter())).expect("in-memory write");
            }
        }
    }
    let body = String::from_utf8(w.into_inner().expect("flush")).expect("utf-8");
    format!("# {header_line}\n{body}")
}

pub fn table_file(header: &RunHeader<'_, SimulateRun>, runs: &[CellRun], format: TableFormat) -> CliResult<String> {
    let cells: Vec<_> = runs.iter().map(|r| r.metrics.clone()).collect();
    Ok(match format {
        TableFormat::Markdown => format!("<!-- {} -->\n\n{}", header.to_line(), render_table(&cells, format)?),
        TableFormat::Csv => format!("# {}\n{}", header.to_line(), render_table(&cells, format)?),
        TableFormat::Json => {
            serde_json::to_string_pretty(&json!({ "run": header, "cells": cells })).expect("metrics serialize") + "\n"
        }
    })
}

pub fn run(args: SimulateArgs, file: SimulateSection) -> CliResult<()> {
    let run = SimulateRun::resolve(args, file)?;
    let format = TableFormat::from_name(&run.format)?;
    let runs = run
        .cells()
        .iter()
        .map(|cell| run_cell_with_workers(cell, run.workers))
        .collect::<dcue::Result<Vec<_>>>()?;
    let header = RunHeader::new("simulate", run.seed, &run);
    let table = table_file(&header, &runs, format)?;
    write_output(&run.out, &format!("table.{}", format.extension()), &table)?;
    write_output(&run.out, "replications.csv", &raw_csv(&header.to_line(), &runs))?;
    print!("{table}");
    Ok(())
}
