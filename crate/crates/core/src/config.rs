//! Top-level simulation configuration, loaded from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::allocator::QosConstraints;
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::harness::ScenarioConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloConfig {
    pub trials: usize,
    /// Extra `[n_tx, n_rx]` pairs run on the same trial seeds for CDF comparison.
    pub compare_antennas: Vec<[usize; 2]>,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig {
            trials: 100,
            compare_antennas: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub scenario: ScenarioConfig,
    pub estimator: EstimatorConfig,
    pub allocator: QosConstraints,
    pub montecarlo: MonteCarloConfig,
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.estimator.validate()?;
        self.allocator.validate()?;
        if self.montecarlo.trials == 0 {
            return Err(Error::config("montecarlo.trials must be at least 1"));
        }
        for &[t, r] in &self.montecarlo.compare_antennas {
            if t == 0 || r == 0 {
                return Err(Error::config(
                    "montecarlo.compare_antennas entries must be positive",
                ));
            }
        }
        Ok(())
    }
}
