//! Property tests for partitioning: exact multiset conservation,
//! disjointness, determinism, and the Dirichlet concentration behaviour.

use std::collections::BTreeMap;

use fedpeft_core::data::{language_counts, partition, ClientShard, Example, PartitionMode};
use proptest::prelude::*;

fn multiset(examples: &[Example]) -> BTreeMap<(String, usize, Vec<u32>), usize> {
    let mut m = BTreeMap::new();
    for ex in examples {
        *m.entry((ex.language.clone(), ex.label, ex.tokens.clone()))
            .or_insert(0) += 1;
    }
    m
}

fn union(shards: &[ClientShard]) -> Vec<Example> {
    shards.iter().flat_map(|s| s.examples.clone()).collect()
}

prop_compose! {
    fn arb_dataset()(
        num_languages in 1usize..5,
        sizes in proptest::collection::vec(1usize..60, 1..5),
        salt in any::<u32>(),
    ) -> Vec<Example> {
        let mut data = Vec::new();
        for (li, &n) in sizes.iter().enumerate().take(num_languages.max(1)) {
            for i in 0..n {
                data.push(Example {
                    tokens: vec![(salt % 97) + li as u32, i as u32 % 31],
                    label: i % 3,
                    language: format!("l{li}"),
                });
            }
        }
        data
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn partition_conserves_and_is_disjoint(
        data in arb_dataset(),
        k in 1usize..7,
        alpha in prop_oneof![Just(0.1), Just(1.0), Just(10.0), 0.05f64..50.0],
        seed in any::<u64>(),
        noniid in any::<bool>(),
    ) {
        prop_assume!(k <= data.len());
        let mode = if noniid { PartitionMode::NonIid } else { PartitionMode::Iid };
        let part = partition(&data, k, mode, alpha, seed).unwrap();

        prop_assert_eq!(part.shards.len(), k);
        // disjoint allocation: sizes add up exactly
        let total: usize = part.shards.iter().map(|s| s.size()).sum();
        prop_assert_eq!(total, data.len());
        // multiset union equals the dataset: nothing lost, nothing duplicated
        prop_assert_eq!(multiset(&union(&part.shards)), multiset(&data));
    }

    #[test]
    fn partition_is_deterministic_in_all_inputs(
        data in arb_dataset(),
        k in 1usize..5,
        seed in any::<u64>(),
    ) {
        prop_assume!(k <= data.len());
        for mode in [PartitionMode::Iid, PartitionMode::NonIid] {
            let a = partition(&data, k, mode, 0.7, seed).unwrap();
            let b = partition(&data, k, mode, 0.7, seed).unwrap();
            for (x, y) in a.shards.iter().zip(&b.shards) {
                prop_assert_eq!(&x.examples, &y.examples);
            }
        }
    }
}

/// Mean per-client entropy of the language share distribution.
fn mean_language_entropy(shards: &[ClientShard]) -> f64 {
    let mut entropies = Vec::new();
    for shard in shards {
        if shard.examples.is_empty() {
            entropies.push(0.0);
            continue;
        }
        let counts = language_counts(&shard.examples);
        let n = shard.size() as f64;
        let h: f64 = counts
            .values()
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum();
        entropies.push(h);
    }
    entropies.iter().sum::<f64>() / entropies.len() as f64
}

#[test]
fn dirichlet_entropy_is_monotone_in_alpha() {
    let mut data = Vec::new();
    for li in 0..5 {
        for i in 0..200 {
            data.push(Example {
                tokens: vec![li as u32, i as u32 % 17],
                label: i % 4,
                language: format!("l{li}"),
            });
        }
    }

    let alphas = [0.1, 1.0, 10.0, 1e6];
    let mut means = Vec::new();
    for &alpha in &alphas {
        let mut acc = 0.0;
        for seed in 0..10u64 {
            let part = partition(&data, 5, PartitionMode::NonIid, alpha, seed).unwrap();
            acc += mean_language_entropy(&part.shards);
        }
        means.push(acc / 10.0);
    }
    for pair in means.windows(2) {
        assert!(
            pair[1] >= pair[0] - 1e-9,
            "entropy not monotone over alphas: {means:?}"
        );
    }
    // the extremes must actually separate: near-uniform at 1e6
    assert!(means[3] > means[0] + 0.5, "no concentration effect: {means:?}");
    assert!((means[3] - (5.0f64).ln()).abs() < 0.05);
}
