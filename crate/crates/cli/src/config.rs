//! Pipeline configuration. Every subcommand starts from the defaults below,
//! applies the `--config` file on top, then its own flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use surrogate_core::{MlpConfig, OracleDescriptor, OutputSchema, SearchSpace, SplitRatios, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputPreset {
    /// 4 quantities × 3 regions × 4 years.
    Toy,
    /// 44 quantities × 32 regions × 16 years.
    Full,
}

impl OutputPreset {
    pub fn schema(self) -> OutputSchema {
        match self {
            OutputPreset::Toy => OutputSchema::toy(),
            OutputPreset::Full => OutputSchema::full(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_lhs: usize,
    pub n_base: usize,
    pub delta: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_lhs: 4096,
            n_base: 400,
            delta: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_layers: Vec<usize>,
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            hidden_layers: vec![256; 4],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HpoSection {
    /// Number of trials; 0 disables the search.
    pub budget: usize,
    pub seed: u64,
    pub space: SearchSpace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Sampling seed. DGSM blocks use `seed + 1`, the split uses `seed + 2`.
    pub seed: u64,
    pub oracle_seed: u64,
    pub outputs: OutputPreset,
    pub sampler: SamplerConfig,
    pub split: SplitRatios,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub hpo: HpoSection,
    /// Working directory for `run`.
    pub workdir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            oracle_seed: 0,
            outputs: OutputPreset::Toy,
            sampler: SamplerConfig::default(),
            split: SplitRatios::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            hpo: HpoSection::default(),
            workdir: PathBuf::from("run"),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        if !path.is_file() {
            return Err(CliError::Usage(format!("config file {} does not exist", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: invalid config: {e}", path.display())))
    }

    pub fn dgsm_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn split_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    pub fn oracle(&self) -> OracleDescriptor {
        OracleDescriptor {
            seed: self.oracle_seed,
            outputs: self.outputs.schema(),
        }
    }

    pub fn mlp(&self, input_dim: usize, output_dim: usize) -> MlpConfig {
        MlpConfig {
            input_dim,
            hidden_layers: self.model.hidden_layers.clone(),
            output_dim,
            seed: self.model.seed,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.split.validate()?;
        self.train.validate()?;
        if self.model.hidden_layers.is_empty() || self.model.hidden_layers.contains(&0) {
            return Err(CliError::Usage("model.hidden_layers needs at least one non-zero width".into()));
        }
        Ok(())
    }
}
