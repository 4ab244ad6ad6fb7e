//! Rendering of cell metrics in the layout of the Monte Carlo tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{CellMetrics, Estimator, EstimatorMetrics};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Markdown,
    Json,
    Csv,
}

impl TableFormat {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "markdown" | "md" => Ok(TableFormat::Markdown),
            "json" => Ok(TableFormat::Json),
            "csv" => Ok(TableFormat::Csv),
            other => Err(Error::Config(format!("unknown table format {other:?}"))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Markdown => "md",
            TableFormat::Json => "json",
            TableFormat::Csv => "csv",
        }
    }
}

pub const MARKDOWN_HEADER: &str = "| Method | CP | m | |mean bias| | |median bias| | √Var | √EVar | Cov95 |";

const CSV_HEADER: &str = "method,scenario,n,cp,m,abs_mean_bias,abs_median_bias,sd,root_mean_evar,cov95,\
successes,failure_count,j_reject05,k_reject05";

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.digits$}"))
}

/// Rows grouped by estimator (in table order), then by cell order.
fn grouped(cells: &[CellMetrics]) -> Vec<(&CellMetrics, &EstimatorMetrics)> {
    let mut out = Vec::new();
    for e in Estimator::ALL {
        for cell in cells {
            if let Some(row) = cell.row(e) {
                out.push((cell, row));
            }
        }
    }
    out
}

/// Deterministic rendering of one or more cells.
pub fn render_table(cells: &[CellMetrics], format: TableFormat) -> Result<String> {
    if cells.is_empty() || cells.iter().all(|c| c.rows.is_empty()) {
        return Err(Error::Config("nothing to render: no cell metrics".into()));
    }
    let mut s = String::new();
    match format {
        TableFormat::Json => {
            s = serde_json::to_string_pretty(cells)
                .map_err(|e| Error::Config(format!("cannot serialize metrics: {e}")))?;
            s.push('\n');
        }
        TableFormat::Markdown => {
            let escaped = MARKDOWN_HEADER
                .replace("|mean bias|", "\\|mean bias\\|")
                .replace("|median bias|", "\\|median bias\\|");
            s.push_str(&escaped);
            s.push_str("\n|---|---|---|---|---|---|---|---|\n");
            for (cell, r) in grouped(cells) {
                writeln!(
                    s,
                    "| {} | {} | {} | {:.3} | {:.3} | {:.3} | {} | {:.3} |",
                    r.method,
                    cell.cp,
                    cell.m,
                    r.abs_mean_bias,
                    r.abs_median_bias,
                    r.sd,
                    opt(r.root_mean_evar, 3),
                    r.cov95
                )
                .expect("write to string");
            }
        }
        TableFormat::Csv => {
            s.push_str(CSV_HEADER);
            s.push('\n');
            for (cell, r) in grouped(cells) {
                writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.method,
                    cell.scenario.name(),
                    cell.n,
                    cell.cp,
                    cell.m,
                    r.abs_mean_bias,
                    r.abs_median_bias,
                    r.sd,
                    opt(r.root_mean_evar, 17),
                    r.cov95,
                    r.successes,
                    r.failure_count,
                    opt(r.j_reject05, 6),
                    opt(r.k_reject05, 6),
                )
                .expect("write to string");
            }
        }
    }
    Ok(s)
}
