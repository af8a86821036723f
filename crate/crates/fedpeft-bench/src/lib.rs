//! Shared fixtures for the simulator benchmarks.

use fedpeft_core::data::{generate_synthetic, DatasetSpec, Example, LanguageSpec};
use fedpeft_core::federation::FederationConfig;
use fedpeft_core::model::{ModelConfig, Strategy};

/// Five-language marker dataset sized for benchmarking.
pub fn bench_dataset(per_language: usize) -> Vec<Example> {
    let names = ["de", "en", "fr", "ru", "sw"];
    let spec = DatasetSpec {
        vocab_size: 432,
        num_classes: 4,
        languages: names
            .iter()
            .enumerate()
            .map(|(i, name)| LanguageSpec {
                name: name.to_string(),
                background_start: 32 + 80 * i as u32,
                background_end: 32 + 80 * (i as u32 + 1),
                zipf_exponent: 1.1,
                base_mix: 0.3,
            })
            .collect(),
        examples_per_language: names
            .iter()
            .map(|n| (n.to_string(), per_language))
            .collect(),
        seq_len_min: 6,
        seq_len_max: 12,
        markers_per_class: 8,
        markers_per_example: 3,
        seed: 7,
    };
    generate_synthetic(&spec).expect("valid spec")
}

pub fn bench_model(strategy: Strategy) -> ModelConfig {
    ModelConfig {
        vocab_size: 432,
        embed_dim: 16,
        hidden_dim: 64,
        num_classes: 4,
        prompt_len: 1,
        lora_rank: 2,
        lora_alpha: 16.0,
        lora_dropout: 0.1,
        strategy,
        seed: 11,
    }
}

pub fn bench_federation(rounds: u64) -> FederationConfig {
    FederationConfig {
        clients: 5,
        client_fraction: 1.0,
        rounds,
        local_epochs: 1,
        batch_size: 32,
        lr: 1e-2,
        early_stop_patience: 5,
        alpha: 0.3,
        seed: 3,
    }
}
