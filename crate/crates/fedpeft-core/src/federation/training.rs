//! Local training loops shared by federated clients and the baselines.
//!
//! The centralized baseline and a single federated client must take
//! bit-identical optimisation steps when their seeds line up, so both run
//! through the same epoch function with the same `(round, client, epoch)`
//! shuffle-seed derivation.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::ClientShard;
use crate::error::{Error, Result};
use crate::model::{
    adamw_step, evaluate, init_model, loss_and_grad, Example, ModelConfig, OptimizerState,
    ParameterSet, TensorMap,
};
use crate::rng::{self, tags};

use super::{ClientUpdate, FederationConfig};

/// One pass over `data` in seeded shuffled order, stepping AdamW per
/// mini-batch. Returns the mean per-example loss of the epoch.
fn run_epoch(
    params: &mut ParameterSet,
    opt: &mut OptimizerState,
    data: &[Example],
    shuffle_seed: u64,
    batch_size: usize,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    let shuffled: Vec<Example> = order.into_iter().map(|i| data[i].clone()).collect();

    let mut loss_sum = 0.0;
    for batch in shuffled.chunks(batch_size) {
        let (loss, grads) = loss_and_grad(params, batch, opt.step_count())?;
        adamw_step(params, &grads, opt)?;
        loss_sum += loss * batch.len() as f64;
    }
    Ok(loss_sum / data.len() as f64)
}

fn epoch_seed(fed: &FederationConfig, round: u64, client: u64, epoch: u64) -> u64 {
    rng::derive_seed(fed.seed, &[tags::SHUFFLE, round, client, epoch])
}

/// A client's contribution to one round: install the broadcast global
/// tensors over the shared frozen initialisation, run the configured local
/// epochs with a fresh optimizer, and return the tuned trainable tensors
/// together with the shard size. Frozen tensors are never transmitted.
pub fn local_update(
    global: &TensorMap,
    shard: &ClientShard,
    model_cfg: &ModelConfig,
    fed_cfg: &FederationConfig,
    round: u64,
) -> Result<ClientUpdate> {
    if shard.examples.is_empty() {
        return Err(Error::input(format!(
            "client {} has an empty shard",
            shard.client_id
        )));
    }
    let mut params = init_model(model_cfg)?;
    params.install_trainable(global)?;
    let mut opt = OptimizerState::new(&params, fed_cfg.lr);

    let mut loss_trace = Vec::with_capacity(fed_cfg.local_epochs as usize);
    for epoch in 0..fed_cfg.local_epochs {
        let seed = epoch_seed(fed_cfg, round, shard.client_id as u64, epoch);
        loss_trace.push(run_epoch(
            &mut params,
            &mut opt,
            &shard.examples,
            seed,
            fed_cfg.batch_size,
        )?);
    }

    Ok(ClientUpdate {
        client_id: shard.client_id,
        tensors: params.extract_trainable(),
        dataset_size: shard.examples.len() as u64,
        loss_trace,
    })
}

/// Baseline training with early stopping on held-out accuracy.
///
/// Runs up to `rounds * local_epochs` epochs and halts once accuracy has not
/// improved for `early_stop_patience` consecutive epochs; the final state is
/// returned as-is (no rollback). Shuffle seeds follow the federated
/// derivation with round 0 and `client_tag` as the client slot, which makes
/// the centralized baseline step-for-step identical to a single-client
/// federation.
pub fn train_with_early_stopping(
    train: &[Example],
    validation: &[Example],
    model_cfg: &ModelConfig,
    fed_cfg: &FederationConfig,
    client_tag: u64,
) -> Result<(ParameterSet, Vec<f64>)> {
    if train.is_empty() {
        return Err(Error::input("baseline training set is empty"));
    }
    let mut params = init_model(model_cfg)?;
    let mut opt = OptimizerState::new(&params, fed_cfg.lr);
    let mut losses = Vec::new();
    let mut best_accuracy = f64::NEG_INFINITY;
    let mut epochs_since_improvement = 0u64;

    for epoch in 0..fed_cfg.max_epochs() {
        let seed = epoch_seed(fed_cfg, 0, client_tag, epoch);
        losses.push(run_epoch(
            &mut params,
            &mut opt,
            train,
            seed,
            fed_cfg.batch_size,
        )?);
        let accuracy = evaluate(&params, validation)?.overall;
        if accuracy > best_accuracy {
            best_accuracy = accuracy;
            epochs_since_improvement = 0;
        } else {
            epochs_since_improvement += 1;
            if epochs_since_improvement >= fed_cfg.early_stop_patience {
                break;
            }
        }
    }
    Ok((params, losses))
}
