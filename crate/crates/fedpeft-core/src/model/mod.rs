//! The frozen-backbone text classifier and its tunable parameter subsets.
//!
//! The model is deliberately tiny and fully specified: token embeddings are
//! mean-pooled together with a block of trainable virtual-prompt rows, pushed
//! through one tanh hidden layer and a linear head. Three tuning strategies
//! select which tensors train while the rest stay frozen:
//!
//! * `full`   — everything trains,
//! * `prompt` — only the virtual prompt rows and the head,
//! * `lora`   — only a rank-r factorisation injected into the hidden layer,
//!   plus the head.

mod forward;
mod optimizer;

pub use forward::{evaluate, forward, loss_and_grad, EvalReport, Phase};
pub use optimizer::{adamw_step, OptimizerState};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Which parameter subset is trainable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Full,
    Prompt,
    Lora,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Strategy::Full => "full",
            Strategy::Prompt => "prompt",
            Strategy::Lora => "lora",
        };
        f.write_str(s)
    }
}

fn default_prompt_len() -> usize {
    1
}
fn default_lora_rank() -> usize {
    8
}
fn default_lora_alpha() -> f64 {
    16.0
}
fn default_lora_dropout() -> f64 {
    0.1
}

/// Model dimensions and strategy. Defaults for the PEFT knobs follow the
/// usual prompt-tuning/LoRA settings (1 virtual token, rank 8, alpha 16,
/// dropout 0.1).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    #[serde(default = "default_prompt_len")]
    pub prompt_len: usize,
    #[serde(default = "default_lora_rank")]
    pub lora_rank: usize,
    #[serde(default = "default_lora_alpha")]
    pub lora_alpha: f64,
    #[serde(default = "default_lora_dropout")]
    pub lora_dropout: f64,
    pub strategy: Strategy,
    #[serde(default)]
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::config("vocab_size must be >= 1"));
        }
        if self.embed_dim == 0 {
            return Err(Error::config("embed_dim must be >= 1"));
        }
        if self.hidden_dim == 0 {
            return Err(Error::config("hidden_dim must be >= 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be >= 2"));
        }
        if self.lora_rank == 0 {
            return Err(Error::config("lora_rank must be >= 1"));
        }
        if self.lora_alpha <= 0.0 || !self.lora_alpha.is_finite() {
            return Err(Error::config("lora_alpha must be positive"));
        }
        if !(0.0..1.0).contains(&self.lora_dropout) {
            return Err(Error::config("lora_dropout must lie in [0, 1)"));
        }
        Ok(())
    }

    /// LoRA scaling factor alpha / r.
    pub fn lora_scaling(&self) -> f64 {
        self.lora_alpha / self.lora_rank as f64
    }
}

/// Names of the model tensors. Ordering is the canonical iteration order for
/// every map keyed by tensor name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamName {
    /// Token embeddings, `V x d`.
    E,
    /// Hidden layer weight, `d_h x d`.
    W1,
    /// Hidden layer bias, `d_h x 1`.
    B1,
    /// Head weight, `S x d_h`.
    W2,
    /// Head bias, `S x 1`.
    B2,
    /// Virtual prompt rows, `p x d`.
    P,
    /// LoRA down-projection, `r x d`.
    A,
    /// LoRA up-projection, `d_h x r`.
    B,
}

impl ParamName {
    pub const ALL: [ParamName; 8] = [
        ParamName::E,
        ParamName::W1,
        ParamName::B1,
        ParamName::W2,
        ParamName::B2,
        ParamName::P,
        ParamName::A,
        ParamName::B,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ParamName::E => "E",
            ParamName::W1 => "W1",
            ParamName::B1 => "b1",
            ParamName::W2 => "W2",
            ParamName::B2 => "b2",
            ParamName::P => "P",
            ParamName::A => "A",
            ParamName::B => "B",
        }
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A map from tensor name to tensor; the unit exchanged between clients and
/// the server.
pub type TensorMap = BTreeMap<ParamName, Tensor>;

/// One labelled, tokenised document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<u32>,
    pub label: usize,
    pub language: String,
}

/// The trainable tensor names for a strategy.
///
/// The head (`W2`, `b2`) trains in every strategy; classification would be
/// hopeless at this scale otherwise. LoRA factors exist only under `lora`,
/// and the prompt rows participate in `full` and `prompt`.
pub fn trainable_names(strategy: Strategy) -> BTreeSet<ParamName> {
    use ParamName::*;
    let names: &[ParamName] = match strategy {
        Strategy::Full => &[E, W1, B1, W2, B2, P],
        Strategy::Prompt => &[P, W2, B2],
        Strategy::Lora => &[A, B, W2, B2],
    };
    names.iter().copied().collect()
}

/// The tensors that participate in a strategy's forward pass (and therefore
/// count toward its parameter total).
fn participating_names(strategy: Strategy) -> Vec<ParamName> {
    use ParamName::*;
    match strategy {
        Strategy::Full | Strategy::Prompt => vec![E, W1, B1, W2, B2, P],
        Strategy::Lora => vec![E, W1, B1, W2, B2, P, A, B],
    }
}

/// The full set of model tensors plus per-tensor frozen flags.
#[derive(Debug, Clone)]
pub struct ParameterSet {
    config: ModelConfig,
    tensors: TensorMap,
    trainable: BTreeSet<ParamName>,
}

impl ParameterSet {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensor(&self, name: ParamName) -> &Tensor {
        &self.tensors[&name]
    }

    pub fn tensor_mut(&mut self, name: ParamName) -> &mut Tensor {
        self.tensors.get_mut(&name).expect("all tensors present")
    }

    pub fn is_trainable(&self, name: ParamName) -> bool {
        self.trainable.contains(&name)
    }

    pub fn trainable_set(&self) -> &BTreeSet<ParamName> {
        &self.trainable
    }

    /// Copies of the trainable tensors, keyed by name.
    pub fn extract_trainable(&self) -> TensorMap {
        self.trainable
            .iter()
            .map(|&n| (n, self.tensors[&n].clone()))
            .collect()
    }

    /// Installs received trainable tensors, checking names and shapes.
    pub fn install_trainable(&mut self, incoming: &TensorMap) -> Result<()> {
        for (&name, tensor) in incoming {
            if !self.trainable.contains(&name) {
                return Err(Error::Protocol(format!(
                    "tensor {name} is not trainable under strategy {}",
                    self.config.strategy
                )));
            }
            let have = self.tensors[&name].shape();
            if have != tensor.shape() {
                return Err(Error::Protocol(format!(
                    "tensor {name} shape mismatch: expected {have:?}, got {:?}",
                    tensor.shape()
                )));
            }
            self.tensors.insert(name, tensor.clone());
        }
        Ok(())
    }

    /// Total trainable scalar count; this is what crosses the wire.
    pub fn trainable_scalars(&self) -> u64 {
        self.trainable
            .iter()
            .map(|n| self.tensors[n].len() as u64)
            .sum()
    }
}

fn shape_of(name: ParamName, c: &ModelConfig) -> (usize, usize) {
    match name {
        ParamName::E => (c.vocab_size, c.embed_dim),
        ParamName::W1 => (c.hidden_dim, c.embed_dim),
        ParamName::B1 => (c.hidden_dim, 1),
        ParamName::W2 => (c.num_classes, c.hidden_dim),
        ParamName::B2 => (c.num_classes, 1),
        ParamName::P => (c.prompt_len, c.embed_dim),
        ParamName::A => (c.lora_rank, c.embed_dim),
        ParamName::B => (c.hidden_dim, c.lora_rank),
    }
}

fn gaussian_tensor(name: ParamName, c: &ModelConfig, std: f64) -> Tensor {
    let (rows, cols) = shape_of(name, c);
    let mut rng = rng::named_stream(c.seed, name.as_str());
    let dist = Normal::new(0.0, std).expect("std > 0");
    Tensor::from_fn(rows, cols, |_, _| dist.sample(&mut rng))
}

/// Initialises a fresh parameter set.
///
/// Backbone and prompt tensors draw from N(0, 1/sqrt(fan_in)); the LoRA
/// down-projection uses N(0, 0.02^2) and the up-projection starts at zero so
/// the adapter contributes nothing until trained. Biases start at zero.
/// Every tensor has its own named stream off `config.seed`, so two calls with
/// the same config are bit-identical.
pub fn init_model(config: &ModelConfig) -> Result<ParameterSet> {
    config.validate()?;
    let c = config;
    let mut tensors = TensorMap::new();
    let fan = |n: usize| 1.0 / (n as f64).sqrt();
    tensors.insert(ParamName::E, gaussian_tensor(ParamName::E, c, fan(c.embed_dim)));
    tensors.insert(ParamName::W1, gaussian_tensor(ParamName::W1, c, fan(c.embed_dim)));
    tensors.insert(ParamName::B1, Tensor::zeros(c.hidden_dim, 1));
    tensors.insert(ParamName::W2, gaussian_tensor(ParamName::W2, c, fan(c.hidden_dim)));
    tensors.insert(ParamName::B2, Tensor::zeros(c.num_classes, 1));
    tensors.insert(ParamName::P, gaussian_tensor(ParamName::P, c, fan(c.embed_dim)));
    tensors.insert(ParamName::A, gaussian_tensor(ParamName::A, c, 0.02));
    tensors.insert(ParamName::B, Tensor::zeros(c.hidden_dim, c.lora_rank));

    Ok(ParameterSet {
        config: config.clone(),
        tensors,
        trainable: trainable_names(config.strategy),
    })
}

/// Test-support constructor from explicit tensors; shapes must match the
/// config. Exposed so oracle fixtures can enumerate every weight.
pub fn parameter_set_from_tensors(config: &ModelConfig, tensors: TensorMap) -> Result<ParameterSet> {
    config.validate()?;
    for name in ParamName::ALL {
        let t = tensors
            .get(&name)
            .ok_or_else(|| Error::config(format!("missing tensor {name}")))?;
        let want = shape_of(name, config);
        if t.shape() != want {
            return Err(Error::config(format!(
                "tensor {name} has shape {:?}, expected {want:?}",
                t.shape()
            )));
        }
    }
    Ok(ParameterSet {
        config: config.clone(),
        tensors,
        trainable: trainable_names(config.strategy),
    })
}

/// Exact (total, trainable) scalar counts for a config under a strategy.
pub fn count_params(config: &ModelConfig, strategy: Strategy) -> Result<(u64, u64)> {
    config.validate()?;
    let size = |n: ParamName| {
        let (r, c) = shape_of(n, config);
        (r * c) as u64
    };
    let total = participating_names(strategy).into_iter().map(size).sum();
    let trainable = trainable_names(strategy).iter().map(|&n| size(n)).sum();
    Ok((total, trainable))
}

/// Published XLM-R-base counts used for cost replication: the toy model
/// cannot reach these sizes, so they are stored constants.
pub fn paper_table4_counts(strategy: Strategy) -> (u64, u64) {
    const TOTAL: u64 = 278_655_764;
    match strategy {
        Strategy::Full => (TOTAL, TOTAL),
        Strategy::Prompt => (TOTAL, 1_202_708),
        Strategy::Lora => (TOTAL, 1_491_476),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(strategy: Strategy) -> ModelConfig {
        ModelConfig {
            vocab_size: 100,
            embed_dim: 8,
            hidden_dim: 16,
            num_classes: 3,
            prompt_len: 2,
            lora_rank: 1,
            lora_alpha: 16.0,
            lora_dropout: 0.1,
            strategy,
            seed: 9,
        }
    }

    #[test]
    fn init_shapes() {
        let p = init_model(&cfg(Strategy::Lora)).unwrap();
        assert_eq!(p.tensor(ParamName::E).shape(), (100, 8));
        assert_eq!(p.tensor(ParamName::P).shape(), (2, 8));
        assert_eq!(p.tensor(ParamName::A).shape(), (1, 8));
        assert_eq!(p.tensor(ParamName::B).shape(), (16, 1));
    }

    #[test]
    fn init_is_bit_deterministic() {
        let a = init_model(&cfg(Strategy::Prompt)).unwrap();
        let b = init_model(&cfg(Strategy::Prompt)).unwrap();
        for name in ParamName::ALL {
            assert!(a.tensor(name).bit_eq(b.tensor(name)), "{name} differs");
        }
    }

    #[test]
    fn lora_up_projection_starts_at_zero() {
        let p = init_model(&cfg(Strategy::Lora)).unwrap();
        assert!(p.tensor(ParamName::B).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn trainable_sets_match_strategy() {
        use ParamName::*;
        let p = init_model(&cfg(Strategy::Prompt)).unwrap();
        let want: BTreeSet<_> = [P, W2, B2].into_iter().collect();
        assert_eq!(p.trainable_set(), &want);
        let l = init_model(&cfg(Strategy::Lora)).unwrap();
        let want: BTreeSet<_> = [A, B, W2, B2].into_iter().collect();
        assert_eq!(l.trainable_set(), &want);
    }

    #[test]
    fn count_params_hand_example() {
        // E=800, W1=128, b1=16, W2=48, b2=3, P=16 -> total 1011;
        // prompt trains P + head = 16 + 51 = 67.
        let (total, trainable) = count_params(&cfg(Strategy::Prompt), Strategy::Prompt).unwrap();
        assert_eq!((total, trainable), (1011, 67));
    }

    #[test]
    fn full_trains_everything_it_uses() {
        let (total, trainable) = count_params(&cfg(Strategy::Full), Strategy::Full).unwrap();
        assert_eq!(total, trainable);
    }

    #[test]
    fn zero_dimension_rejected() {
        let mut c = cfg(Strategy::Full);
        c.hidden_dim = 0;
        assert!(matches!(init_model(&c), Err(Error::Config(_))));
    }

    #[test]
    fn table4_presets() {
        assert_eq!(
            paper_table4_counts(Strategy::Full),
            (278_655_764, 278_655_764)
        );
        assert_eq!(paper_table4_counts(Strategy::Prompt).1, 1_202_708);
        assert_eq!(paper_table4_counts(Strategy::Lora).1, 1_491_476);
    }
}
