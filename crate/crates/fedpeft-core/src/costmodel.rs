//! Parameter-efficiency and communication-cost accounting.
//!
//! The transmission model is `m` clients per round, `T` rounds, two
//! directions (download + upload), 4 bytes per scalar. Megabytes are 10^6
//! bytes throughout.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct CostQuery {
    pub trainable_params: u64,
    pub clients_per_round: u64,
    pub rounds: u64,
    pub bytes_per_scalar: u64,
    pub directions: u64,
}

impl CostQuery {
    /// Query with the default wire format (4-byte scalars, both directions).
    pub fn new(trainable_params: u64, clients_per_round: u64, rounds: u64) -> Self {
        CostQuery {
            trainable_params,
            clients_per_round,
            rounds,
            bytes_per_scalar: 4,
            directions: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CostReport {
    pub total_bytes: u64,
    pub per_round_bytes: u64,
    pub megabytes: f64,
}

/// Exact byte count for a query:
/// `total = trainable * bytes_per_scalar * m * T * directions`.
pub fn comm_cost(q: &CostQuery) -> Result<CostReport> {
    if q.trainable_params == 0 {
        return Err(Error::config("trainable_params must be positive"));
    }
    if q.clients_per_round == 0 {
        return Err(Error::config("clients_per_round must be positive"));
    }
    if q.bytes_per_scalar == 0 {
        return Err(Error::config("bytes_per_scalar must be positive"));
    }
    if q.directions == 0 {
        return Err(Error::config("directions must be positive"));
    }
    let per_round = q.trainable_params * q.bytes_per_scalar * q.clients_per_round * q.directions;
    let total = per_round * q.rounds;
    Ok(CostReport {
        total_bytes: total,
        per_round_bytes: per_round,
        megabytes: total as f64 / 1e6,
    })
}

/// `100 * (1 - candidate / baseline)` percent.
pub fn reduction_pct(candidate: &CostReport, baseline: &CostReport) -> Result<f64> {
    if baseline.total_bytes == 0 {
        return Err(Error::input("baseline cost is zero"));
    }
    Ok(100.0 * (1.0 - candidate.total_bytes as f64 / baseline.total_bytes as f64))
}

/// Trainable share of the total parameter count, in [0, 1].
pub fn trainable_fraction(trainable: u64, total: u64) -> Result<f64> {
    if trainable == 0 || trainable > total {
        return Err(Error::input(format!(
            "need 0 < trainable <= total, got {trainable} / {total}"
        )));
    }
    Ok(trainable as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: u64 = 278_655_764;
    const PROMPT: u64 = 1_202_708;
    const LORA: u64 = 1_491_476;

    #[test]
    fn published_counts_reproduce_published_costs() {
        let prompt = comm_cost(&CostQuery::new(PROMPT, 5, 10)).unwrap();
        assert_eq!(prompt.total_bytes, 481_083_200);
        assert!((prompt.megabytes - 481.0832).abs() < 1e-9);
        // within 0.5% of the published 478.93 MB
        assert!((prompt.megabytes - 478.93).abs() / 478.93 < 0.005);

        let full = comm_cost(&CostQuery::new(FULL, 5, 10)).unwrap();
        assert!((full.megabytes - 111_462.305_6).abs() < 1e-6);
        assert!((full.megabytes - 110_592.0).abs() / 110_592.0 < 0.008);

        let lora = comm_cost(&CostQuery::new(LORA, 5, 10)).unwrap();
        assert!((lora.megabytes - 596.5904).abs() < 1e-9);
        assert!((lora.megabytes - 594.0).abs() / 594.0 < 0.005);
    }

    #[test]
    fn zero_rounds_means_zero_bytes() {
        let r = comm_cost(&CostQuery::new(100, 2, 0)).unwrap();
        assert_eq!(r.total_bytes, 0);
    }

    #[test]
    fn reductions_match_published_claims() {
        let full = comm_cost(&CostQuery::new(FULL, 5, 10)).unwrap();
        let prompt = comm_cost(&CostQuery::new(PROMPT, 5, 10)).unwrap();
        let lora = comm_cost(&CostQuery::new(LORA, 5, 10)).unwrap();
        let rp = reduction_pct(&prompt, &full).unwrap();
        assert!((rp - 99.5684).abs() < 1e-3);
        assert!(rp >= 99.0);
        let rl = reduction_pct(&lora, &full).unwrap();
        assert!((rl - 99.4648).abs() < 1e-3);
        assert_eq!(reduction_pct(&full, &full).unwrap(), 0.0);
    }

    #[test]
    fn fractions() {
        let f = trainable_fraction(PROMPT, FULL).unwrap();
        assert!((f - 0.004316106664134893).abs() < 1e-15);
        assert!(f < 0.005);
        let f = trainable_fraction(LORA, FULL).unwrap();
        assert!((f - 0.005352396012163595).abs() < 1e-15);
        assert_eq!(trainable_fraction(7, 7).unwrap(), 1.0);
        assert!(trainable_fraction(8, 7).is_err());
        assert!(trainable_fraction(0, 7).is_err());
    }

    #[test]
    fn cost_ratio_equals_parameter_ratio() {
        let a = comm_cost(&CostQuery::new(123, 4, 9)).unwrap();
        let b = comm_cost(&CostQuery::new(615, 4, 9)).unwrap();
        assert_eq!(b.total_bytes, 5 * a.total_bytes);
    }

    #[test]
    fn linear_in_every_factor() {
        let base = comm_cost(&CostQuery::new(1000, 3, 7)).unwrap();
        let double_m = comm_cost(&CostQuery::new(1000, 6, 7)).unwrap();
        let double_t = comm_cost(&CostQuery::new(1000, 3, 14)).unwrap();
        assert_eq!(double_m.total_bytes, 2 * base.total_bytes);
        assert_eq!(double_t.total_bytes, 2 * base.total_bytes);
    }
}
