//! Experiment paradigms: monolingual, centralized, and federated runs over a
//! shared train/test split, reported in a per-language + average layout.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{languages_of, partition, subsample_language, PartitionMode};
use crate::error::{Error, Result};
use crate::model::{evaluate, Example, ModelConfig, TensorMap};
use crate::rng::{self, fnv1a64, tags};

use super::training::train_with_early_stopping;
use super::{run_round, FederationConfig, RoundRecord, ServerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    /// One isolated model per language, trained on that language only.
    Monolingual,
    /// One model on the pooled data.
    Centralized,
    /// Federated rounds over an IID split.
    FedIid,
    /// Federated rounds over a Dirichlet non-IID split.
    FedNoniid,
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Paradigm::Monolingual => "monolingual",
            Paradigm::Centralized => "centralized",
            Paradigm::FedIid => "fed_iid",
            Paradigm::FedNoniid => "fed_noniid",
        };
        f.write_str(s)
    }
}

fn default_eval_fraction() -> f64 {
    0.2
}

/// Split and ablation knobs shared by every paradigm.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentOptions {
    /// Fraction of each language held out for evaluation.
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
    /// Per-language training-set caps applied after the split (the
    /// data-efficiency ablation knob). Test sets are never subsampled.
    #[serde(default)]
    pub subsample: BTreeMap<String, usize>,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            eval_fraction: default_eval_fraction(),
            subsample: BTreeMap::new(),
        }
    }
}

impl ExperimentOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::config("eval_fraction must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Deterministic per-language split into (train, test). Each language is
/// shuffled with a seed derived from its name, so a language's split does not
/// depend on which other languages share the dataset;
/// `floor(eval_fraction * n)` examples go to the test side.
pub fn split_train_test(
    dataset: &[Example],
    eval_fraction: f64,
    seed: u64,
) -> (Vec<Example>, Vec<Example>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for language in &languages_of(dataset) {
        let mut members: Vec<&Example> = dataset
            .iter()
            .filter(|ex| &ex.language == language)
            .collect();
        let mut stream = rng::stream(seed, &[tags::SPLIT, fnv1a64(language.as_bytes())]);
        members.shuffle(&mut stream);
        let n_test = (members.len() as f64 * eval_fraction).floor() as usize;
        for (i, ex) in members.into_iter().enumerate() {
            if i < n_test {
                test.push(ex.clone());
            } else {
                train.push(ex.clone());
            }
        }
    }
    (train, test)
}

/// Outcome of one paradigm run. `history` is non-empty only for the
/// federated paradigms; `final_trainable` holds the tuned tensors (per
/// language for monolingual, global otherwise).
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub paradigm: Paradigm,
    pub strategy: String,
    pub languages: Vec<String>,
    pub per_language: BTreeMap<String, f64>,
    pub average: f64,
    pub history: Vec<RoundRecord>,
    pub final_trainable: BTreeMap<String, TensorMap>,
}

impl ExperimentReport {
    fn average_of(per_language: &BTreeMap<String, f64>) -> f64 {
        if per_language.is_empty() {
            return 0.0;
        }
        per_language.values().sum::<f64>() / per_language.len() as f64
    }
}

/// Runs one paradigm end to end: split, optional per-language subsampling of
/// the training side, training per the paradigm, and per-language evaluation
/// on the held-out side.
pub fn run_experiment(
    paradigm: Paradigm,
    dataset: &[Example],
    model_cfg: &ModelConfig,
    fed_cfg: &FederationConfig,
    options: &ExperimentOptions,
) -> Result<ExperimentReport> {
    model_cfg.validate()?;
    fed_cfg.validate()?;
    options.validate()?;
    if dataset.is_empty() {
        return Err(Error::input("experiment dataset is empty"));
    }

    let (mut train, test) = split_train_test(dataset, options.eval_fraction, fed_cfg.seed);
    if test.is_empty() {
        return Err(Error::input("eval_fraction leaves no test examples"));
    }
    for (language, &n) in &options.subsample {
        let seed = rng::derive_seed(fed_cfg.seed, &[tags::SUBSAMPLE, fnv1a64(language.as_bytes())]);
        train = subsample_language(&train, language, n, seed)?;
    }
    if train.is_empty() {
        return Err(Error::input("training set is empty"));
    }

    let languages = languages_of(&test);
    let mut final_trainable = BTreeMap::new();

    let (per_language, history) = match paradigm {
        Paradigm::Monolingual => {
            let mut per_language = BTreeMap::new();
            for (lang_idx, language) in languages.iter().enumerate() {
                let lang_train: Vec<Example> = train
                    .iter()
                    .filter(|ex| &ex.language == language)
                    .cloned()
                    .collect();
                let lang_test: Vec<Example> = test
                    .iter()
                    .filter(|ex| &ex.language == language)
                    .cloned()
                    .collect();
                if lang_train.is_empty() {
                    return Err(Error::input(format!(
                        "no training examples left for language {language:?}"
                    )));
                }
                let (params, _) = train_with_early_stopping(
                    &lang_train,
                    &lang_test,
                    model_cfg,
                    fed_cfg,
                    lang_idx as u64,
                )?;
                let report = evaluate(&params, &lang_test)?;
                per_language.insert(language.clone(), report.overall);
                final_trainable.insert(language.clone(), params.extract_trainable());
            }
            (per_language, Vec::new())
        }
        Paradigm::Centralized => {
            let (params, _) = train_with_early_stopping(&train, &test, model_cfg, fed_cfg, 0)?;
            let report = evaluate(&params, &test)?;
            final_trainable.insert("global".to_string(), params.extract_trainable());
            (report.per_language, Vec::new())
        }
        Paradigm::FedIid | Paradigm::FedNoniid => {
            let mode = if paradigm == Paradigm::FedIid {
                PartitionMode::Iid
            } else {
                PartitionMode::NonIid
            };
            let split = partition(
                &train,
                fed_cfg.clients,
                mode,
                fed_cfg.alpha,
                rng::derive_seed(fed_cfg.seed, &[tags::PARTITION_IID, 0]),
            )?;
            let mut server = ServerState::new(model_cfg)?;
            for _ in 0..fed_cfg.rounds {
                run_round(&mut server, &split.shards, &test, model_cfg, fed_cfg)?;
            }
            let last = server.history.last().expect("at least one round");
            final_trainable.insert("global".to_string(), server.global.clone());
            (last.per_language.clone(), server.history)
        }
    };

    let average = ExperimentReport::average_of(&per_language);
    Ok(ExperimentReport {
        paradigm,
        strategy: model_cfg.strategy.to_string(),
        languages,
        per_language,
        average,
        history,
        final_trainable,
    })
}

/// Writes reports as a `paradigm,strategy,<languages...>,avg` table, one row
/// per report, mirroring the usual per-language results layout.
pub fn write_summary_csv<W: std::io::Write>(
    out: W,
    reports: &[ExperimentReport],
) -> Result<()> {
    let mut languages: Vec<String> = Vec::new();
    for report in reports {
        for lang in &report.languages {
            if !languages.contains(lang) {
                languages.push(lang.clone());
            }
        }
    }
    languages.sort();

    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["paradigm".to_string(), "strategy".to_string()];
    header.extend(languages.iter().cloned());
    header.push("avg".to_string());
    w.write_record(&header).map_err(|e| Error::Input(e.to_string()))?;
    for report in reports {
        let mut row = vec![report.paradigm.to_string(), report.strategy.clone()];
        for lang in &languages {
            row.push(
                report
                    .per_language
                    .get(lang)
                    .map(|a| format!("{a:.4}"))
                    .unwrap_or_default(),
            );
        }
        row.push(format!("{:.4}", report.average));
        w.write_record(&row).map_err(|e| Error::Input(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
