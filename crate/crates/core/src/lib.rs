//! Debiased continuously-updated GMM for partially linear instrumental
//! variable models with many, possibly weak, instruments.
//!
//! The pipeline is: cross-fit the nuisance regressions ([`learners`]),
//! residualize ([`data::residualize`]), build the moment system
//! ([`moments::MomentSystem`]), minimize the CUE objective
//! ([`estimators::estimate_cue`]) and report inference ([`inference`]).

// `!(x > 0.0)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod learners;
pub mod linalg;
pub mod moments;
pub mod optimize;
pub mod selfcheck;
pub mod simulate;

pub use data::{load_csv, make_folds, residualize, ColumnSchema, Dataset, FoldPartition, ResidualData};
pub use error::{Error, Result};
pub use estimators::{estimate_cue, EstimateReport, Method, SearchInterval};
pub use inference::InferenceReport;
pub use learners::{cross_fit, LearnerSpec, NuisanceFit, NuisanceFunctions};
pub use moments::MomentSystem;
