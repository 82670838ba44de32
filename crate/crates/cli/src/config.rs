//! Run configuration: a TOML file whose values command-line flags override.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use triarm::testdata::{CondMeanMethod, DEFAULT_REPS};
use triarm::welfare::{OutcomeOptions, SignConvention, WelfareConfig};

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub data: DataSection,
    pub welfare: WelfareSection,
    pub outcome: OutcomeSection,
    pub search: SearchSection,
    pub correction: CorrectionSection,
    pub simulate: SimulateSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub input: Option<PathBuf>,
    /// Covariate columns; all non-canonical columns when absent.
    pub covariates: Option<Vec<String>>,
    pub truth: Option<PathBuf>,
    pub tree: Option<PathBuf>,
    pub panel: Option<PathBuf>,
}

/// Partial welfare parameters laid over the defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WelfareSection {
    pub price: Option<f64>,
    pub marginal_cost: Option<f64>,
    pub admin_cost: Option<f64>,
    pub capacity_price: Option<f64>,
    pub event_hours: Option<f64>,
    pub sign_convention: Option<SignConvention>,
}

impl WelfareSection {
    pub fn resolve(&self) -> WelfareConfig {
        let d = WelfareConfig::default();
        WelfareConfig {
            price: self.price.unwrap_or(d.price),
            marginal_cost: self.marginal_cost.unwrap_or(d.marginal_cost),
            admin_cost: self.admin_cost.unwrap_or(d.admin_cost),
            capacity_price: self.capacity_price.unwrap_or(d.capacity_price),
            event_hours: self.event_hours.unwrap_or(d.event_hours),
            sign_convention: self.sign_convention.unwrap_or(d.sign_convention),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeSection {
    pub baseline_diff: Option<bool>,
    pub demean: Option<bool>,
}

impl OutcomeSection {
    pub fn resolve(&self) -> OutcomeOptions {
        let d = OutcomeOptions::default();
        OutcomeOptions {
            baseline_diff: self.baseline_diff.unwrap_or(d.baseline_diff),
            demean: self.demean.unwrap_or(d.demean),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Exact depth-3 tree over T and NT only.
    Paternalistic,
    /// Two-step search over all three arms.
    Mixed,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub mode: Mode,
    pub depth: usize,
    pub min_leaf: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection {
            mode: Mode::Mixed,
            depth: 3,
            min_leaf: triarm::policy::DEFAULT_MIN_LEAF,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorrectionSection {
    pub method: CondMeanMethod,
    pub reps: usize,
}

impl Default for CorrectionSection {
    fn default() -> Self {
        CorrectionSection {
            method: CondMeanMethod::default(),
            reps: DEFAULT_REPS,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Preset name.
    pub dgp: Option<String>,
    /// Full process description; wins over `dgp`.
    pub dgp_file: Option<PathBuf>,
    pub n: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn require_seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Config("this command is stochastic and needs --seed (or `seed` in the config)".into()))
    }

    pub fn out_dir(&self) -> Result<PathBuf, CliError> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("triarm-out"));
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::Config(format!("output directory {} is not writable: {e}", dir.display())))?;
        Ok(dir)
    }

    pub fn input(&self) -> Result<&Path, CliError> {
        self.data
            .input
            .as_deref()
            .ok_or_else(|| CliError::Config("no input dataset (use --data or [data] input)".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg: RunConfig = toml::from_str(
            r#"
seed = 3
[welfare]
admin_cost = 100.0
[search]
mode = "paternalistic"
[correction]
method = { method = "regression_tree", min_leaf = 10, max_depth = 4 }
"#,
        )
        .unwrap();
        let w = cfg.welfare.resolve();
        assert_eq!(w.admin_cost, 100.0);
        assert_eq!(w.price, 25.0);
        assert_eq!(cfg.search.mode, Mode::Paternalistic);
        assert_eq!(cfg.search.depth, 3);
        assert_eq!(cfg.correction.reps, DEFAULT_REPS);
        assert!(cfg.outcome.resolve().demean);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 3").is_err());
        assert!(toml::from_str::<RunConfig>("[search]\ndepht = 2").is_err());
    }
}
