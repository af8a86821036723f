//! IID and non-IID allocation of a dataset across clients.
//!
//! Non-IID follows the standard federated construction: for each language a
//! K-dimensional proportion vector is drawn from Dirichlet(alpha) and the
//! language's examples are allocated by largest-remainder rounding, so shards
//! partition the dataset exactly. Large alpha approaches a uniform mixture;
//! alpha near zero concentrates each language on few clients.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Example;
use crate::rng::{self, tags};

use super::languages_of;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMode {
    Iid,
    NonIid,
}

/// One client's private data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: usize,
    pub examples: Vec<Example>,
}

impl ClientShard {
    pub fn size(&self) -> usize {
        self.examples.len()
    }
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub shards: Vec<ClientShard>,
    pub mode: PartitionMode,
    pub alpha: f64,
}

/// Dirichlet(alpha * 1_k) proportions via normalised Gamma draws.
fn dirichlet_proportions(rng: &mut impl rand::Rng, k: usize, alpha: f64) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.into_iter().map(|d| d / sum).collect()
    } else {
        // Extremely small alpha can underflow every draw; concentrate the
        // language on one seeded client, which is the alpha -> 0 limit.
        let winner = rng.random_range(0..k);
        (0..k).map(|i| if i == winner { 1.0 } else { 0.0 }).collect()
    }
}

/// Integer allocation of `n` items to proportions by largest remainder;
/// conserves `n` exactly. Ties go to the lower index.
fn largest_remainder(proportions: &[f64], n: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = Vec::with_capacity(proportions.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(proportions.len());
    let mut assigned = 0usize;
    for (i, &p) in proportions.iter().enumerate() {
        let exact = p * n as f64;
        let floor = exact.floor() as usize;
        counts.push(floor);
        assigned += floor;
        remainders.push((i, exact - floor as f64));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut left = n - assigned.min(n);
    for (i, _) in remainders {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Splits `dataset` into `k` disjoint shards whose multiset union is exactly
/// the dataset. Deterministic in `(dataset, k, mode, alpha, seed)`.
pub fn partition(
    dataset: &[Example],
    k: usize,
    mode: PartitionMode,
    alpha: f64,
    seed: u64,
) -> Result<Partition> {
    if k == 0 {
        return Err(Error::config("client count must be >= 1"));
    }
    if k > dataset.len() {
        return Err(Error::input(format!(
            "cannot split {} examples across {k} clients",
            dataset.len()
        )));
    }
    if mode == PartitionMode::NonIid && (!alpha.is_finite() || alpha <= 0.0) {
        return Err(Error::config("alpha must be positive for non-IID splits"));
    }

    // Allocation happens on indices; shards are materialised in ascending
    // dataset order so the result is independent of allocation order.
    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); k];
    match mode {
        PartitionMode::Iid => {
            if k == 1 {
                assignment[0].extend(0..dataset.len());
            } else {
                let mut indices: Vec<usize> = (0..dataset.len()).collect();
                let mut stream = rng::stream(seed, &[tags::PARTITION_IID]);
                indices.shuffle(&mut stream);
                let n = indices.len();
                let base = n / k;
                let extra = n % k;
                let mut cursor = 0usize;
                for (client, slot) in assignment.iter_mut().enumerate() {
                    let take = base + usize::from(client < extra);
                    slot.extend_from_slice(&indices[cursor..cursor + take]);
                    cursor += take;
                }
            }
        }
        PartitionMode::NonIid => {
            for (lang_idx, lang) in languages_of(dataset).iter().enumerate() {
                let mut members: Vec<usize> = dataset
                    .iter()
                    .enumerate()
                    .filter(|(_, ex)| &ex.language == lang)
                    .map(|(i, _)| i)
                    .collect();
                let mut dir_stream =
                    rng::stream(seed, &[tags::PARTITION_DIR, lang_idx as u64]);
                let proportions = dirichlet_proportions(&mut dir_stream, k, alpha);
                let counts = largest_remainder(&proportions, members.len());
                let mut assign_stream =
                    rng::stream(seed, &[tags::PARTITION_ASSIGN, lang_idx as u64]);
                members.shuffle(&mut assign_stream);
                let mut cursor = 0usize;
                for (client, &count) in counts.iter().enumerate() {
                    assignment[client].extend_from_slice(&members[cursor..cursor + count]);
                    cursor += count;
                }
            }
        }
    }

    let shards = assignment
        .into_iter()
        .enumerate()
        .map(|(client_id, mut indices)| {
            indices.sort_unstable();
            ClientShard {
                client_id,
                examples: indices.into_iter().map(|i| dataset[i].clone()).collect(),
            }
        })
        .collect();

    Ok(Partition { shards, mode, alpha })
}

/// Keeps a seeded uniform sample of `n` examples of `language`; all other
/// languages pass through untouched, in dataset order.
pub fn subsample_language(
    dataset: &[Example],
    language: &str,
    n: usize,
    seed: u64,
) -> Result<Vec<Example>> {
    let mut members: Vec<usize> = dataset
        .iter()
        .enumerate()
        .filter(|(_, ex)| ex.language == language)
        .map(|(i, _)| i)
        .collect();
    if members.is_empty() {
        return Err(Error::input(format!("unknown language {language:?}")));
    }
    if n > members.len() {
        return Err(Error::input(format!(
            "cannot keep {n} examples of {language:?}: only {} available",
            members.len()
        )));
    }
    let mut stream = rng::stream(seed, &[tags::SUBSAMPLE]);
    members.shuffle(&mut stream);
    let keep: std::collections::BTreeSet<usize> = members.into_iter().take(n).collect();
    Ok(dataset
        .iter()
        .enumerate()
        .filter(|(i, ex)| ex.language != language || keep.contains(i))
        .map(|(_, ex)| ex.clone())
        .collect())
}
