use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::{CompetitionMode, SynthConfig, DEFAULT_CLUSTERS};
use crate::demand::DEFAULT_DRAWS;
use crate::error::{Error, Result};
use crate::estimation::{EstimationConfig, BOOTSTRAP_DRAWS};
use crate::supply::{Scenario, SpGrouping};

/// Everything a pipeline run depends on. Loaded from TOML; command-line
/// flags override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Listing CSVs. When empty, the output of `synth` is used.
    pub inputs: Vec<PathBuf>,
    /// JSON column mapping for inputs with non-canonical headers.
    pub column_mapping: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub n_draws: usize,
    pub clusters: usize,
    pub scenarios: Vec<Scenario>,
    pub mode: CompetitionMode,
    pub bootstrap_draws: usize,
    pub sp_grouping: SpGrouping,
    pub estimation: EstimationConfig,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            column_mapping: None,
            output_dir: PathBuf::from("conductsim-out"),
            seed: 2024,
            n_draws: DEFAULT_DRAWS,
            clusters: DEFAULT_CLUSTERS,
            scenarios: vec![Scenario::Baseline, Scenario::SelfPreferencing],
            mode: CompetitionMode::default(),
            bootstrap_draws: BOOTSTRAP_DRAWS,
            sp_grouping: SpGrouping::default(),
            estimation: EstimationConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Pushes the top-level seed, draw count and bootstrap size into the
    /// nested stage configs.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.estimation.seed = c.seed;
        c.estimation.n_draws = c.n_draws;
        c.estimation.bootstrap_draws = c.bootstrap_draws;
        c.synth.seed = c.seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_draws == 0 {
            return Err(Error::Config("n_draws must be positive".into()));
        }
        if self.clusters < 2 {
            return Err(Error::Config("at least two price clusters are required".into()));
        }
        if self.scenarios.is_empty() {
            return Err(Error::Config("no scenario selected".into()));
        }
        self.resolved().estimation.validate()
    }

    /// SHA-256 of the resolved configuration, hex encoded. The output
    /// directory is left out so relocated runs stay byte-identical.
    pub fn hash(&self) -> String {
        let mut c = self.resolved();
        c.output_dir = PathBuf::new();
        let canonical = serde_json::to_vec(&c).expect("config serializes to JSON");
        hex::encode(Sha256::digest(canonical))
    }
}
