//! Run configuration: one JSON document describing the model, the data
//! source, the federation settings, and the paradigm. Unknown keys are
//! rejected and an echo of the fully resolved config (defaults and seed
//! overrides applied) is written next to every run's outputs.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use fedpeft_core::data::{generate_synthetic, ingest_jsonl, DatasetSpec, Example};
use fedpeft_core::federation::{ExperimentOptions, FederationConfig, Paradigm};
use fedpeft_core::model::ModelConfig;
use fedpeft_core::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generate a dataset from the embedded spec.
    Synthetic(DatasetSpec),
    /// Read a JSONL file (fields `text`, `label`, `language`, optional
    /// pre-tokenised `tokens`).
    Ingest {
        path: PathBuf,
        vocab_size: usize,
        num_classes: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DataSource,
    pub federation: FederationConfig,
    pub paradigm: Paradigm,
    #[serde(default)]
    pub options: ExperimentOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// When set, overrides every embedded seed (model, data, federation).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl RunConfig {
    /// Applies a seed override (command line beats config file beats the
    /// per-section seeds) and validates every section.
    pub fn resolve(&mut self, cli_seed: Option<u64>) -> Result<()> {
        if let Some(seed) = cli_seed.or(self.seed) {
            self.seed = Some(seed);
            self.model.seed = seed;
            self.federation.seed = seed;
            if let DataSource::Synthetic(spec) = &mut self.data {
                spec.seed = seed;
            }
        }
        self.model.validate()?;
        self.federation.validate()?;
        self.options.validate()?;
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        Ok(())
    }

    /// Materialises the dataset from the configured source.
    pub fn load_dataset(&self) -> Result<Vec<Example>> {
        match &self.data {
            DataSource::Synthetic(spec) => generate_synthetic(spec),
            DataSource::Ingest {
                path,
                vocab_size,
                num_classes,
            } => ingest_jsonl(path, *vocab_size, *num_classes),
        }
    }
}
