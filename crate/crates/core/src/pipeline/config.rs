//! One TOML file configures every stage. Unset keys take the documented
//! defaults, so an empty file is a valid configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::RawColumn;
use crate::forest::ForestConfig;
use crate::impute::ImputeConfig;

use super::emit::config_hash;
use super::synth::SynthConfig;
use super::{MissingRankPolicy, PipelineError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSection {
    /// Covariates missing in at least this fraction of subjects are dropped.
    pub missingness_threshold: f64,
    /// Ancestry principal-component columns used to residualize PGS inputs.
    pub pc_columns: Vec<String>,
    /// Raw covariate columns and their coding rules.
    pub columns: Vec<RawColumn>,
}

impl Default for CohortSection {
    fn default() -> Self {
        CohortSection {
            missingness_threshold: 0.20,
            pc_columns: Vec::new(),
            columns: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightsSection {
    /// Inverse-probability weights are capped at this empirical quantile.
    pub truncation_quantile: f64,
    /// 0/1 column marking subjects included in the weighted subsample.
    pub included_col: String,
    /// Covariates entering the propensity model.
    pub features: Vec<String>,
}

impl Default for WeightsSection {
    fn default() -> Self {
        WeightsSection {
            truncation_quantile: 0.99,
            included_col: "has_pgs".to_string(),
            features: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RankSection {
    pub missing_policy: MissingRankPolicy,
}

/// Everything a full run needs; each stage also accepts its section alone.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub cohort: CohortSection,
    pub impute: ImputeConfig,
    pub weights: WeightsSection,
    pub forest: ForestConfig,
    pub rank: RankSection,
    pub synth: SynthConfig,
}

impl RunConfig {
    /// Parse a config file. A top-level `seed` key reseeds every stage so
    /// one number makes the whole run reproducible; a `seed` key inside a
    /// stage section still wins for that stage.
    pub fn load(path: &Path) -> Result<RunConfig, PipelineError> {
        let text = std::fs::read_to_string(path)?;
        let bad = |e: toml::de::Error| {
            PipelineError::Malformed(format!("config {}: {e}", path.display()))
        };
        let table: toml::Table = text.parse().map_err(bad)?;
        let has_top_seed = table.contains_key("seed");
        let explicit = |section: &str| {
            table.get(section).and_then(|v| v.get("seed")).and_then(|v| v.as_integer())
        };
        let impute = explicit("impute");
        let forest = explicit("forest");
        let synth = explicit("synth");
        let mut cfg: RunConfig = toml::Value::Table(table).try_into().map_err(bad)?;
        if has_top_seed {
            cfg.set_seed(cfg.seed);
            if let Some(s) = impute {
                cfg.impute.seed = s as u64;
            }
            if let Some(s) = forest {
                cfg.forest.seed = s as u64;
            }
            if let Some(s) = synth {
                cfg.synth.seed = s as u64;
            }
        }
        Ok(cfg)
    }

    /// Override the seed everywhere it appears (CLI --seed beats the file).
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.impute.seed = seed;
        self.forest.seed = seed;
        self.synth.seed = seed;
    }

    /// Hash of the canonical serialized form; stable across reruns.
    pub fn hash(&self) -> String {
        let canon = toml::to_string(self).unwrap_or_default();
        config_hash(&canon)
    }
}
