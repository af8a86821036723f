//! Desk-scale simulator of multilingual federated parameter-efficient
//! fine-tuning.
//!
//! Clients hold per-language shards of a labelled corpus and tune a small
//! trainable subset (virtual prompt rows, LoRA factors, or everything) of a
//! frozen tiny classifier. A server runs selection / local tuning /
//! dataset-size-weighted averaging rounds. Companion modules compute the
//! typological language-distance metric and the parameter/communication cost
//! accounting. Every operation is a pure function of its inputs and explicit
//! seeds, so whole experiments replay bit-for-bit.

pub mod costmodel;
pub mod data;
pub mod error;
pub mod federation;
pub mod langdist;
pub mod model;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
