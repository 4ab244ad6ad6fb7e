//! Declarative run configuration: one TOML file with a section per command.
//! Command-line flags override file values, which override built-in defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::failure::{CliResult, Failure};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub estimate: EstimateSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub selftest: SelftestSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSection {
    pub data: Option<PathBuf>,
    pub outcome: Option<String>,
    pub treatment: Option<String>,
    pub instruments: Option<Vec<String>>,
    pub covariates: Option<Vec<String>>,
    pub learner: Option<String>,
    pub folds: Option<usize>,
    pub method: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub beta_star: Option<f64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub scenario: Option<String>,
    pub n: Option<Vec<usize>>,
    pub m: Option<Vec<usize>>,
    pub cp: Option<Vec<f64>>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub learner: Option<String>,
    pub folds: Option<usize>,
    pub method: Option<Vec<String>>,
    pub rho: Option<f64>,
    pub beta0: Option<f64>,
    pub noise_correlation: Option<f64>,
    pub format: Option<String>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelftestSection {
    pub seed: Option<u64>,
    pub instances: Option<usize>,
    pub out: Option<PathBuf>,
}

impl FileConfig {
    /// Reads `path`; relative data and output paths are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| Failure::config(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.estimate.data);
        rebase(&mut cfg.estimate.out);
        rebase(&mut cfg.simulate.out);
        rebase(&mut cfg.selftest.out);
        Ok(cfg)
    }
}

/// Reproducibility header embedded in every output file.
#[derive(Debug, Clone, Serialize)]
pub struct RunHeader<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config: &'a C,
}

impl<'a, C: Serialize> RunHeader<'a, C> {
    pub fn new(command: &'static str, seed: u64, config: &'a C) -> Self {
        RunHeader {
            tool: "dcue",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("header serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<FileConfig>("[simulate]\nrepz = 3\n").unwrap_err();
        assert!(err.to_string().contains("repz"));
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[estimate]\ndata = \"d.csv\"\n[simulate]\nout = \"/abs\"\n").unwrap();
        let cfg = FileConfig::load(&path).unwrap();
        assert_eq!(cfg.estimate.data.unwrap(), dir.path().join("d.csv"));
        assert_eq!(cfg.simulate.out.unwrap(), PathBuf::from("/abs"));
    }
}
