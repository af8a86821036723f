//! The federated averaging protocol over trainable parameter subsets.
//!
//! Each round: select a fraction of clients, broadcast the global trainable
//! tensors, let every selected client tune them locally against the shared
//! frozen backbone, then form the next global tensors as the
//! dataset-size-weighted average of the returned updates. Only trainable
//! tensors ever cross the client/server boundary, which is where the
//! communication savings of prompt/LoRA tuning come from.

mod experiment;
mod training;

pub use experiment::{
    run_experiment, split_train_test, write_summary_csv, ExperimentOptions, ExperimentReport,
    Paradigm,
};
pub use training::{local_update, train_with_early_stopping};

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::costmodel::{comm_cost, CostQuery};
use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::model::{evaluate, init_model, ModelConfig, TensorMap};
use crate::rng::{self, tags};
use crate::tensor::Tensor;

fn default_lr() -> f64 {
    1e-3
}
fn default_patience() -> u64 {
    5
}
fn default_alpha() -> f64 {
    1.0
}
fn default_fraction() -> f64 {
    1.0
}

/// Round-loop configuration. `alpha` is the Dirichlet concentration used for
/// non-IID partitioning; `early_stop_patience` applies only to the
/// monolingual/centralized baselines — federated clients always run a fixed
/// number of local epochs per round.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    pub clients: usize,
    #[serde(default = "default_fraction")]
    pub client_fraction: f64,
    pub rounds: u64,
    pub local_epochs: u64,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_patience")]
    pub early_stop_patience: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::config("clients must be >= 1"));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::config("client_fraction must lie in (0, 1]"));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr must be positive"));
        }
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(Error::config("alpha must be positive"));
        }
        Ok(())
    }

    /// Epoch budget for the non-federated baselines; matches the federated
    /// compute budget of `rounds * local_epochs`.
    pub fn max_epochs(&self) -> u64 {
        self.rounds * self.local_epochs
    }
}

/// Server-side state: the global trainable tensors, the round counter, and
/// the per-round metrics history.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub global: TensorMap,
    pub round: u64,
    pub history: Vec<RoundRecord>,
}

impl ServerState {
    /// Initialises the global tensors from the shared model seed.
    pub fn new(model_cfg: &ModelConfig) -> Result<Self> {
        let params = init_model(model_cfg)?;
        Ok(ServerState {
            global: params.extract_trainable(),
            round: 0,
            history: Vec::new(),
        })
    }
}

/// Metrics of one completed round; serialised as one JSONL line.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RoundRecord {
    pub round: u64,
    pub participants: Vec<usize>,
    pub per_language: BTreeMap<String, f64>,
    pub mean_accuracy: f64,
    pub mean_local_loss: f64,
    pub bytes_transmitted: u64,
}

/// What a client returns to the server after local tuning.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub tensors: TensorMap,
    pub dataset_size: u64,
    pub loss_trace: Vec<f64>,
}

/// Uniformly samples `m = max(floor(C * K), 1)` distinct client ids.
/// Deterministic in `(k, fraction, round_seed)`; returned ids are sorted.
pub fn select_clients(k: usize, fraction: f64, round_seed: u64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::input("no clients to select from"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config("client_fraction must lie in (0, 1]"));
    }
    let m = ((fraction * k as f64).floor() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(round_seed);
    let mut ids = rand::seq::index::sample(&mut rng, k, m).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Dataset-size-weighted average of the updates, normalised over the
/// participating set. Tensors are summed in ascending client-id order so the
/// result is bit-identical however the updates were produced or delivered.
pub fn aggregate(updates: &[ClientUpdate]) -> Result<TensorMap> {
    let first = updates
        .first()
        .ok_or_else(|| Error::input("aggregate requires at least one update"))?;
    for u in updates {
        if u.tensors.len() != first.tensors.len()
            || !u.tensors.keys().eq(first.tensors.keys())
        {
            return Err(Error::Protocol(format!(
                "client {} update has a different tensor schema",
                u.client_id
            )));
        }
        for (name, t) in &u.tensors {
            if t.shape() != first.tensors[name].shape() {
                return Err(Error::Protocol(format!(
                    "client {} tensor {name} has shape {:?}, expected {:?}",
                    u.client_id,
                    t.shape(),
                    first.tensors[name].shape()
                )));
            }
        }
    }
    if updates.len() == 1 {
        return Ok(first.tensors.clone());
    }

    let total: u64 = updates.iter().map(|u| u.dataset_size).sum();
    if total == 0 {
        return Err(Error::input("total dataset size across updates is zero"));
    }
    let mut order: Vec<&ClientUpdate> = updates.iter().collect();
    order.sort_by_key(|u| u.client_id);

    let mut result: TensorMap = first
        .tensors
        .iter()
        .map(|(&n, t)| (n, Tensor::zeros(t.rows(), t.cols())))
        .collect();
    for u in order {
        let w = u.dataset_size as f64 / total as f64;
        for (name, acc) in result.iter_mut() {
            acc.add_scaled(&u.tensors[name], w);
        }
    }
    Ok(result)
}

fn thread_cap() -> Option<usize> {
    let raw = std::env::var("FEDPEFT_THREADS").ok()?;
    match raw.trim().parse::<usize>() {
        Ok(0) | Err(_) => None, // 0 or garbage means "auto"
        Ok(n) => Some(n),
    }
}

fn client_pool() -> Option<&'static rayon::ThreadPool> {
    static POOL: OnceLock<Option<rayon::ThreadPool>> = OnceLock::new();
    POOL.get_or_init(|| {
        thread_cap().map(|n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("thread pool")
        })
    })
    .as_ref()
}

/// Runs the client closures, possibly in parallel, preserving input order.
/// Results are order-stable, so the schedule cannot influence anything
/// downstream.
fn map_clients<T: Send>(
    shards: Vec<&ClientShard>,
    f: impl Fn(&ClientShard) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    use rayon::prelude::*;
    let work = || shards.par_iter().map(|s| f(s)).collect::<Result<Vec<T>>>();
    match client_pool() {
        Some(pool) => pool.install(work),
        None => work(),
    }
}

/// One communication round: select, locally tune, aggregate, evaluate on the
/// held-out set, and append a metrics record.
pub fn run_round(
    server: &mut ServerState,
    clients: &[ClientShard],
    test_set: &[crate::model::Example],
    model_cfg: &ModelConfig,
    fed_cfg: &FederationConfig,
) -> Result<()> {
    let round = server.round;
    let round_seed = rng::derive_seed(fed_cfg.seed, &[tags::SELECT, round]);
    let selected = select_clients(clients.len(), fed_cfg.client_fraction, round_seed)?;

    // Clients whose shard is empty have nothing to train on and sit the
    // round out.
    let active: Vec<&ClientShard> = selected
        .iter()
        .map(|&id| &clients[id])
        .filter(|s| !s.examples.is_empty())
        .collect();

    let global = &server.global;
    let updates = map_clients(active, |shard| {
        local_update(global, shard, model_cfg, fed_cfg, round)
    })?;

    if !updates.is_empty() {
        server.global = aggregate(&updates)?;
    }

    let mut eval_params = init_model(model_cfg)?;
    eval_params.install_trainable(&server.global)?;
    let report = evaluate(&eval_params, test_set)?;
    let mean_accuracy = if report.per_language.is_empty() {
        0.0
    } else {
        report.per_language.values().sum::<f64>() / report.per_language.len() as f64
    };

    let final_losses: Vec<f64> = updates
        .iter()
        .filter_map(|u| u.loss_trace.last().copied())
        .collect();
    let mean_local_loss = if final_losses.is_empty() {
        0.0
    } else {
        final_losses.iter().sum::<f64>() / final_losses.len() as f64
    };

    let trainable = eval_params.trainable_scalars();
    let bytes_transmitted = if updates.is_empty() {
        0
    } else {
        comm_cost(&CostQuery::new(trainable, updates.len() as u64, 1))?.total_bytes
    };

    server.history.push(RoundRecord {
        round,
        participants: updates.iter().map(|u| u.client_id).collect(),
        per_language: report.per_language,
        mean_accuracy,
        mean_local_loss,
        bytes_transmitted,
    });
    server.round += 1;
    Ok(())
}
