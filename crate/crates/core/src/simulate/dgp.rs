//! Data-generating processes for the Monte Carlo designs.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Scenario, ScenarioConfig};
use crate::data::Dataset;
use crate::error::Result;
use crate::learners::NuisanceFunctions;

/// Number of covariates entering the high-dimensional design's coefficient vectors.
pub const ACTIVE_COVARIATES: usize = 5;

/// Covariates of the low-dimensional and local-to-zero designs.
pub const LOW_DIM_P: usize = 3;

/// Covariates of the high-dimensional design.
pub const HIGH_DIM_P: usize = 100;

fn alpha_low(x: &[f64]) -> f64 {
    1.0 + x[0] - 0.5 * x[1] + 0.1 * x[1].sin() + 0.5 * x[2] + (0.3 * x[2]).exp()
}

fn f_low(x: &[f64]) -> f64 {
    1.5 + 2.0 * x[0] - 0.5 * x[1] + 0.3 * x[1] * x[1] - 0.5 * x[2] + 0.3 / (1.0 + x[2].exp())
}

fn h_low(x: &[f64]) -> f64 {
    2.0 + 1.5 * x[0] + 0.5 * x[1] + 0.2 * x[1] * x[1] + 0.5 * x[2] + 0.2 * (-x[2]).exp()
}

fn active_sum(x: &[f64]) -> f64 {
    x[..ACTIVE_COVARIATES].iter().sum()
}

/// True `(ℓ₀, r₀, α₀)` of a design. Every instrument shares the same
/// propensity score and the same first-stage coefficient `π`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignTruth {
    pub scenario: Scenario,
    pub m: usize,
    pub pi: f64,
    pub beta0: f64,
}

impl DesignTruth {
    /// Common propensity score `α₀j(x)`.
    pub fn alpha_scalar(&self, x: &[f64]) -> f64 {
        match self.scenario {
            Scenario::S1Lowdim => alpha_low(x),
            Scenario::S2Highdim => active_sum(x),
            Scenario::LocalToZero => 0.0,
        }
    }

    /// Covariate effect on the treatment.
    pub fn f(&self, x: &[f64]) -> f64 {
        match self.scenario {
            Scenario::S1Lowdim | Scenario::LocalToZero => f_low(x),
            Scenario::S2Highdim => active_sum(x),
        }
    }

    /// Covariate effect on the outcome.
    pub fn h(&self, x: &[f64]) -> f64 {
        match self.scenario {
            Scenario::S1Lowdim | Scenario::LocalToZero => h_low(x),
            Scenario::S2Highdim => active_sum(x),
        }
    }
}

impl NuisanceFunctions for DesignTruth {
    fn m(&self) -> usize {
        self.m
    }

    fn ell(&self, x: &[f64]) -> f64 {
        self.r(x) * self.beta0 + self.h(x)
    }

    fn r(&self, x: &[f64]) -> f64 {
        self.m as f64 * self.pi * self.alpha_scalar(x) + self.f(x)
    }

    fn alpha(&self, x: &[f64], out: &mut [f64]) {
        out.fill(self.alpha_scalar(x));
    }
}

/// First-stage coefficient shared by all instruments.
pub fn first_stage_coefficient(cfg: &ScenarioConfig) -> f64 {
    let n = cfg.n as f64;
    match cfg.scenario {
        Scenario::S1Lowdim | Scenario::S2Highdim => (cfg.cp / (n * cfg.m as f64)).sqrt(),
        Scenario::LocalToZero => (cfg.cp / n).sqrt(),
    }
}

pub fn covariate_dim(scenario: Scenario) -> usize {
    match scenario {
        Scenario::S1Lowdim | Scenario::LocalToZero => LOW_DIM_P,
        Scenario::S2Highdim => HIGH_DIM_P,
    }
}

/// Population `n G'Ω⁻¹G` at `β₀`.
///
/// Given `X`, the instrument residuals are the noise `ε_i` with covariance
/// `Σ = (1 − c)I + c·11'` and the structural error has unit variance
/// independent of `(Z, X)`. So `G = −Σπ`, `Ω = Σ` and `n G'Ω⁻¹G = n π'Σπ`.
pub fn population_concentration(cfg: &ScenarioConfig) -> f64 {
    let m = cfg.m as f64;
    let pi = first_stage_coefficient(cfg);
    let c = cfg.noise_correlation;
    cfg.n as f64 * pi * pi * ((1.0 - c) * m + c * m * m)
}

/// Draws one dataset. Row `i` consumes, in order: `p` covariates, the
/// shared instrument shock, `m` idiosyncratic instrument shocks, `ν_i`, `ε̃_i`.
pub fn generate(cfg: &ScenarioConfig, seed: u64) -> Result<(Dataset, Arc<DesignTruth>)> {
    cfg.validate()?;
    let (n, m) = (cfg.n, cfg.m);
    let p = covariate_dim(cfg.scenario);
    let truth = DesignTruth {
        scenario: cfg.scenario,
        m,
        pi: first_stage_coefficient(cfg),
        beta0: cfg.beta0,
    };
    let c = cfg.noise_correlation;
    let (shared, own) = (c.sqrt(), (1.0 - c).sqrt());
    let structural = (1.0 - cfg.rho * cfg.rho).sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(n, p);
    let mut z = DMatrix::zeros(n, m);
    let mut y = DVector::zeros(n);
    let mut d = DVector::zeros(n);
    let mut row = vec![0.0; p];
    for i in 0..n {
        for (j, v) in row.iter_mut().enumerate() {
            *v = rng.sample(StandardNormal);
            x[(i, j)] = *v;
        }
        let alpha = truth.alpha_scalar(&row);
        let common: f64 = rng.sample(StandardNormal);
        let mut z_pi = 0.0;
        for j in 0..m {
            let e: f64 = rng.sample(StandardNormal);
            let zij = alpha + shared * common + own * e;
            z[(i, j)] = zij;
            z_pi += zij * truth.pi;
        }
        let nu: f64 = rng.sample(StandardNormal);
        let eps: f64 = rng.sample(StandardNormal);
        d[i] = z_pi + truth.f(&row) + nu;
        y[i] = d[i] * cfg.beta0 + truth.h(&row) + cfg.rho * nu + structural * eps;
    }
    Ok((Dataset::new(y, d, z, x)?, Arc::new(truth)))
}

/// Low-dimensional design; `cfg.scenario` must be [`Scenario::S1Lowdim`].
pub fn generate_s1(cfg: &ScenarioConfig, seed: u64) -> Result<(Dataset, Arc<DesignTruth>)> {
    expect(cfg, Scenario::S1Lowdim)?;
    generate(cfg, seed)
}

/// High-dimensional design; `cfg.scenario` must be [`Scenario::S2Highdim`].
pub fn generate_s2(cfg: &ScenarioConfig, seed: u64) -> Result<(Dataset, Arc<DesignTruth>)> {
    expect(cfg, Scenario::S2Highdim)?;
    generate(cfg, seed)
}

/// Instruments independent of the covariates with `π_j = √(cp/n)`.
pub fn generate_local_to_zero(cfg: &ScenarioConfig, seed: u64) -> Result<(Dataset, Arc<DesignTruth>)> {
    expect(cfg, Scenario::LocalToZero)?;
    generate(cfg, seed)
}

fn expect(cfg: &ScenarioConfig, s: Scenario) -> Result<()> {
    if cfg.scenario != s {
        return Err(crate::error::Error::Config(format!(
            "generator for {} called with scenario {}",
            s.name(),
            cfg.scenario.name()
        )));
    }
    Ok(())
}
