//! Forward pass, analytic gradients, and evaluation.
//!
//! The computation per example is
//!
//! ```text
//! h = mean(P_1..P_p, E[t_1]..E[t_L])          pooled embedding, length d
//! a = W_eff h + b1,  z = tanh(a)              hidden layer, length d_h
//! u = W2 z + b2                               logits, length S
//! ```
//!
//! where `W_eff = W1` except under LoRA, which adds `(alpha/r) * B A` with a
//! per-step dropout mask on the input features during training. Gradients are
//! derived by hand and checked against finite differences in the test suite.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, tags};
use crate::tensor::Tensor;

use super::{Example, ParamName, ParameterSet, Strategy, TensorMap};

/// Forward mode. Training carries the optimizer step index, which seeds the
/// LoRA dropout mask; a fixed step always yields the same mask, so training
/// is reproducible and finite differences stay consistent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Eval,
    Train { step: u64 },
}

/// Per-input-feature dropout scaling for the LoRA path: entries are either 0
/// or 1/(1-q). With q = 0 this is all ones and training equals evaluation.
fn lora_mask(params: &ParameterSet, phase: Phase) -> Option<Vec<f64>> {
    let c = params.config();
    if c.strategy != Strategy::Lora {
        return None;
    }
    let d = c.embed_dim;
    let q = c.lora_dropout;
    match phase {
        Phase::Eval => Some(vec![1.0; d]),
        Phase::Train { step } => {
            if q == 0.0 {
                Some(vec![1.0; d])
            } else {
                let keep = 1.0 / (1.0 - q);
                let mut stream = rng::stream(c.seed, &[tags::DROPOUT, step]);
                Some(
                    (0..d)
                        .map(|_| if stream.random::<f64>() < q { 0.0 } else { keep })
                        .collect(),
                )
            }
        }
    }
}

struct Trace {
    pooled: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

fn forward_trace(params: &ParameterSet, example: &Example, mask: Option<&[f64]>) -> Result<Trace> {
    let c = params.config();
    if example.tokens.is_empty() {
        return Err(Error::input("example has an empty token sequence"));
    }
    for &t in &example.tokens {
        if t as usize >= c.vocab_size {
            return Err(Error::input(format!(
                "token id {t} out of range for vocab_size {}",
                c.vocab_size
            )));
        }
    }

    let embed = params.tensor(ParamName::E);
    let prompt = params.tensor(ParamName::P);
    let n = c.prompt_len + example.tokens.len();
    let mut pooled = vec![0.0; c.embed_dim];
    for i in 0..c.prompt_len {
        for (s, v) in pooled.iter_mut().zip(prompt.row(i)) {
            *s += v;
        }
    }
    for &t in &example.tokens {
        for (s, v) in pooled.iter_mut().zip(embed.row(t as usize)) {
            *s += v;
        }
    }
    let inv_n = 1.0 / n as f64;
    for s in pooled.iter_mut() {
        *s *= inv_n;
    }

    // a = W1 h + b1, plus the scaled LoRA path B (A (m .* h)) when present.
    let w1 = params.tensor(ParamName::W1);
    let b1 = params.tensor(ParamName::B1);
    let mut pre = w1.matvec(&pooled);
    for (a, b) in pre.iter_mut().zip(b1.data()) {
        *a += b;
    }
    if let Some(m) = mask {
        let a_mat = params.tensor(ParamName::A);
        let b_mat = params.tensor(ParamName::B);
        let masked: Vec<f64> = pooled.iter().zip(m).map(|(h, mm)| h * mm).collect();
        let down = a_mat.matvec(&masked);
        let up = b_mat.matvec(&down);
        let s = c.lora_scaling();
        for (a, u) in pre.iter_mut().zip(&up) {
            *a += s * u;
        }
    }
    let hidden: Vec<f64> = pre.iter().map(|a| a.tanh()).collect();

    let w2 = params.tensor(ParamName::W2);
    let b2 = params.tensor(ParamName::B2);
    let mut logits = w2.matvec(&hidden);
    for (u, b) in logits.iter_mut().zip(b2.data()) {
        *u += b;
    }

    Ok(Trace {
        pooled,
        hidden,
        logits,
    })
}

/// Class logits for one example.
pub fn forward(params: &ParameterSet, example: &Example, phase: Phase) -> Result<Vec<f64>> {
    let mask = lora_mask(params, phase);
    Ok(forward_trace(params, example, mask.as_deref())?.logits)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|u| (u - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|u| (u - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Mean cross-entropy over the batch and its gradient for every trainable
/// tensor. `step` indexes the optimizer step (LoRA dropout mask seed).
pub fn loss_and_grad(
    params: &ParameterSet,
    batch: &[Example],
    step: u64,
) -> Result<(f64, TensorMap)> {
    if batch.is_empty() {
        return Err(Error::input("loss_and_grad requires a non-empty batch"));
    }
    let c = params.config();
    for ex in batch {
        if ex.label >= c.num_classes {
            return Err(Error::input(format!(
                "label {} out of range for num_classes {}",
                ex.label, c.num_classes
            )));
        }
    }

    let mask = lora_mask(params, Phase::Train { step });
    let mut grads: TensorMap = params
        .trainable_set()
        .iter()
        .map(|&n| {
            let (r, cl) = params.tensor(n).shape();
            (n, Tensor::zeros(r, cl))
        })
        .collect();

    let strategy = c.strategy;
    let w1 = params.tensor(ParamName::W1);
    let w2 = params.tensor(ParamName::W2);
    let inv_batch = 1.0 / batch.len() as f64;
    let mut total_loss = 0.0;

    for ex in batch {
        let trace = forward_trace(params, ex, mask.as_deref())?;
        total_loss += cross_entropy(&trace.logits, ex.label);

        // d(loss)/d(logits) = softmax(u) - onehot(y), scaled by 1/|batch|.
        let mut dlogits = softmax(&trace.logits);
        dlogits[ex.label] -= 1.0;
        for g in dlogits.iter_mut() {
            *g *= inv_batch;
        }

        grads
            .get_mut(&ParamName::W2)
            .expect("head always trainable")
            .add_outer(&dlogits, &trace.hidden, 1.0);
        for (g, d) in grads
            .get_mut(&ParamName::B2)
            .expect("head always trainable")
            .data_mut()
            .iter_mut()
            .zip(&dlogits)
        {
            *g += d;
        }

        // Back through tanh: da = (W2^T du) .* (1 - z^2).
        let dhidden = w2.matvec_t(&dlogits);
        let dpre: Vec<f64> = dhidden
            .iter()
            .zip(&trace.hidden)
            .map(|(d, z)| d * (1.0 - z * z))
            .collect();

        if strategy == Strategy::Full {
            grads
                .get_mut(&ParamName::W1)
                .unwrap()
                .add_outer(&dpre, &trace.pooled, 1.0);
            for (g, d) in grads
                .get_mut(&ParamName::B1)
                .unwrap()
                .data_mut()
                .iter_mut()
                .zip(&dpre)
            {
                *g += d;
            }
        }

        // dh = W_eff^T da; the LoRA path adds s * m .* (A^T (B^T da)).
        let mut dpooled = w1.matvec_t(&dpre);
        if let Some(m) = mask.as_deref() {
            let a_mat = params.tensor(ParamName::A);
            let b_mat = params.tensor(ParamName::B);
            let s = c.lora_scaling();
            let db_up = b_mat.matvec_t(&dpre); // B^T da, length r
            let masked_h: Vec<f64> = trace.pooled.iter().zip(m).map(|(h, mm)| h * mm).collect();
            let down = a_mat.matvec(&masked_h); // A (m .* h), length r
            grads
                .get_mut(&ParamName::B)
                .unwrap()
                .add_outer(&dpre, &down, s);
            grads
                .get_mut(&ParamName::A)
                .unwrap()
                .add_outer(&db_up, &masked_h, s);
            let back = a_mat.matvec_t(&db_up); // A^T B^T da, length d
            for ((dp, bk), mm) in dpooled.iter_mut().zip(&back).zip(m) {
                *dp += s * bk * mm;
            }
        }

        // Mean pooling spreads dh/n onto every contributing row.
        let n = c.prompt_len + ex.tokens.len();
        let inv_n = 1.0 / n as f64;
        if let Some(gp) = grads.get_mut(&ParamName::P) {
            for i in 0..c.prompt_len {
                for (g, d) in gp.row_mut(i).iter_mut().zip(&dpooled) {
                    *g += d * inv_n;
                }
            }
        }
        if let Some(ge) = grads.get_mut(&ParamName::E) {
            for &t in &ex.tokens {
                for (g, d) in ge.row_mut(t as usize).iter_mut().zip(&dpooled) {
                    *g += d * inv_n;
                }
            }
        }
    }

    Ok((total_loss * inv_batch, grads))
}

/// Accuracy per language and overall.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_language: BTreeMap<String, f64>,
    pub overall: f64,
}

/// Argmax prediction in eval mode; ties break toward the lowest class index.
pub fn evaluate(params: &ParameterSet, dataset: &[Example]) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::input("evaluate requires a non-empty dataset"));
    }
    let mut correct: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let mut total_correct = 0usize;
    for ex in dataset {
        let logits = forward(params, ex, Phase::Eval)?;
        let mut best = 0usize;
        for (i, &u) in logits.iter().enumerate() {
            if u > logits[best] {
                best = i;
            }
        }
        let entry = correct.entry(ex.language.as_str()).or_insert((0, 0));
        entry.1 += 1;
        if best == ex.label {
            entry.0 += 1;
            total_correct += 1;
        }
    }
    Ok(EvalReport {
        per_language: correct
            .into_iter()
            .map(|(lang, (c, n))| (lang.to_string(), c as f64 / n as f64))
            .collect(),
        overall: total_correct as f64 / dataset.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, parameter_set_from_tensors, ModelConfig};

    fn example(tokens: &[u32], label: usize, language: &str) -> Example {
        Example {
            tokens: tokens.to_vec(),
            label,
            language: language.to_string(),
        }
    }

    fn tiny_config(strategy: Strategy) -> ModelConfig {
        ModelConfig {
            vocab_size: 4,
            embed_dim: 2,
            hidden_dim: 2,
            num_classes: 2,
            prompt_len: 1,
            lora_rank: 1,
            lora_alpha: 0.5,
            lora_dropout: 0.0,
            strategy,
            seed: 5,
        }
    }

    /// The fully enumerated fixture checked against an independent
    /// straight-line reference computation.
    fn tiny_params(strategy: Strategy) -> ParameterSet {
        let cfg = tiny_config(strategy);
        let mut t = TensorMap::new();
        t.insert(
            ParamName::E,
            Tensor::from_rows(&[&[0.1, -0.2], &[0.3, 0.4], &[-0.5, 0.6], &[0.7, -0.8]]),
        );
        t.insert(ParamName::P, Tensor::from_rows(&[&[0.05, -0.15]]));
        t.insert(ParamName::W1, Tensor::from_rows(&[&[0.2, -0.3], &[0.4, 0.1]]));
        t.insert(ParamName::B1, Tensor::col_vec(&[0.01, -0.02]));
        t.insert(ParamName::W2, Tensor::from_rows(&[&[0.5, -0.4], &[-0.6, 0.3]]));
        t.insert(ParamName::B2, Tensor::col_vec(&[0.1, -0.1]));
        t.insert(ParamName::A, Tensor::from_rows(&[&[0.3, -0.2]]));
        t.insert(ParamName::B, Tensor::from_rows(&[&[0.25], &[-0.35]]));
        parameter_set_from_tensors(&cfg, t).unwrap()
    }

    #[test]
    fn forward_matches_reference_values() {
        let params = tiny_params(Strategy::Prompt);
        let logits = forward(&params, &example(&[2, 3], 0, "en"), Phase::Eval).unwrap();
        assert!((logits[0] - 0.1301276425389102).abs() < 1e-12);
        assert!((logits[1] - -0.13645317076891478).abs() < 1e-12);
        let (loss, _) = loss_and_grad(&params, &[example(&[2, 3], 0, "en")], 0).unwrap();
        assert!((loss - 0.5687137605612146).abs() < 1e-12);
    }

    #[test]
    fn lora_forward_matches_reference_values() {
        let params = tiny_params(Strategy::Lora);
        let logits = forward(&params, &example(&[2, 3], 1, "en"), Phase::Eval).unwrap();
        assert!((logits[0] - 0.13651915236776152).abs() < 1e-12);
        assert!((logits[1] - -0.14260050163761198).abs() < 1e-12);
        let (loss, _) = loss_and_grad(&params, &[example(&[2, 3], 1, "en")], 0).unwrap();
        assert!((loss - 0.842414030829121).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_give_uniform_softmax_and_ln_s_loss() {
        let mut cfg = tiny_config(Strategy::Full);
        cfg.num_classes = 4;
        cfg.hidden_dim = 3;
        let mut t = TensorMap::new();
        t.insert(ParamName::E, Tensor::zeros(4, 2));
        t.insert(ParamName::P, Tensor::zeros(1, 2));
        t.insert(ParamName::W1, Tensor::zeros(3, 2));
        t.insert(ParamName::B1, Tensor::zeros(3, 1));
        t.insert(ParamName::W2, Tensor::zeros(4, 3));
        t.insert(ParamName::B2, Tensor::zeros(4, 1));
        t.insert(ParamName::A, Tensor::zeros(1, 2));
        t.insert(ParamName::B, Tensor::zeros(3, 1));
        let params = parameter_set_from_tensors(&cfg, t).unwrap();

        let ex = example(&[0, 1], 2, "en");
        let logits = forward(&params, &ex, Phase::Eval).unwrap();
        assert!(logits.iter().all(|&u| u == 0.0));
        let (loss, grads) = loss_and_grad(&params, &[ex], 0).unwrap();
        assert!((loss - (4.0f64).ln()).abs() < 1e-15);
        // uniform softmax minus onehot
        let gb2 = grads[&ParamName::B2].data();
        assert!((gb2[0] - 0.25).abs() < 1e-15);
        assert!((gb2[2] - -0.75).abs() < 1e-15);
    }

    #[test]
    fn lora_zero_delta_matches_base_forward_exactly() {
        let lora = init_model(&tiny_config(Strategy::Lora)).unwrap();
        let full = init_model(&tiny_config(Strategy::Full)).unwrap();
        let ex = example(&[1, 2, 0], 0, "en");
        let a = forward(&lora, &ex, Phase::Train { step: 0 }).unwrap();
        let b = forward(&full, &ex, Phase::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn train_equals_eval_when_dropout_zero() {
        let params = tiny_params(Strategy::Lora);
        let ex = example(&[3, 1], 0, "en");
        let train = forward(&params, &ex, Phase::Train { step: 7 }).unwrap();
        let eval = forward(&params, &ex, Phase::Eval).unwrap();
        assert_eq!(train, eval);
    }

    #[test]
    fn dropout_masks_are_step_deterministic() {
        let mut cfg = tiny_config(Strategy::Lora);
        cfg.lora_dropout = 0.5;
        let params = init_model(&cfg).unwrap();
        let ex = example(&[0, 1, 2, 3], 1, "en");
        let a = forward(&params, &ex, Phase::Train { step: 3 }).unwrap();
        let b = forward(&params, &ex, Phase::Train { step: 3 }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_range_token_rejected() {
        let params = tiny_params(Strategy::Prompt);
        let err = forward(&params, &example(&[9], 0, "en"), Phase::Eval);
        assert!(matches!(err, Err(Error::Input(_))));
    }

    #[test]
    fn empty_batch_rejected() {
        let params = tiny_params(Strategy::Prompt);
        assert!(matches!(
            loss_and_grad(&params, &[], 0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn prompt_grads_cover_exactly_the_trainable_set() {
        let params = tiny_params(Strategy::Prompt);
        let (_, grads) = loss_and_grad(&params, &[example(&[1], 1, "en")], 0).unwrap();
        let keys: Vec<_> = grads.keys().copied().collect();
        assert_eq!(keys, vec![ParamName::W2, ParamName::B2, ParamName::P]);
    }

    #[test]
    fn evaluate_matches_the_independent_prediction_oracle() {
        // 20-example fixture; expected per-language accuracies computed by a
        // separate straight-line prediction script over the same weights.
        let cfg = tiny_config(Strategy::Prompt);
        let mut t = TensorMap::new();
        t.insert(
            ParamName::E,
            Tensor::from_rows(&[&[1.0, -2.0], &[3.0, 4.0], &[-5.0, 6.0], &[7.0, -8.0]]),
        );
        t.insert(ParamName::P, Tensor::from_rows(&[&[0.5, -1.5]]));
        t.insert(ParamName::W1, Tensor::from_rows(&[&[2.0, -3.0], &[4.0, 1.0]]));
        t.insert(ParamName::B1, Tensor::col_vec(&[0.1, -0.2]));
        t.insert(ParamName::W2, Tensor::from_rows(&[&[5.0, -4.0], &[-6.0, 3.0]]));
        t.insert(ParamName::B2, Tensor::col_vec(&[0.1, -0.1]));
        t.insert(ParamName::A, Tensor::from_rows(&[&[0.3, -0.2]]));
        t.insert(ParamName::B, Tensor::from_rows(&[&[0.25], &[-0.35]]));
        let params = parameter_set_from_tensors(&cfg, t).unwrap();

        #[rustfmt::skip]
        let fixture: [(&[u32], usize, &str); 20] = [
            (&[0, 1], 0, "en"), (&[1, 2], 1, "en"), (&[2, 3], 0, "en"), (&[3, 0], 1, "en"),
            (&[0, 0, 1], 0, "en"), (&[1, 3], 1, "en"), (&[2], 0, "en"), (&[3, 3], 1, "en"),
            (&[0, 2, 2], 0, "en"), (&[1], 1, "en"),
            (&[3, 2], 0, "fr"), (&[2, 2], 1, "fr"), (&[1, 0], 0, "fr"), (&[0, 3], 1, "fr"),
            (&[3, 1, 1], 0, "fr"), (&[2, 0], 1, "fr"),
            (&[1, 1], 0, "de"), (&[0], 1, "de"), (&[2, 1, 3], 0, "de"), (&[3], 1, "de"),
        ];
        let dataset: Vec<Example> = fixture
            .iter()
            .map(|(tokens, label, lang)| example(tokens, *label, lang))
            .collect();
        let report = evaluate(&params, &dataset).unwrap();
        assert_eq!(report.per_language["de"], 0.25);
        assert_eq!(report.per_language["en"], 0.5);
        assert!((report.per_language["fr"] - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(report.overall, 0.55);
    }

    #[test]
    fn evaluate_is_perfect_when_labels_match_predictions() {
        let params = tiny_params(Strategy::Prompt);
        let inputs: [&[u32]; 6] = [&[0, 1], &[1, 2], &[2, 3], &[3], &[0, 0], &[2]];
        let dataset: Vec<Example> = inputs
            .iter()
            .enumerate()
            .map(|(i, tokens)| {
                let logits = forward(&params, &example(tokens, 0, "xx"), Phase::Eval).unwrap();
                let label = if logits[1] > logits[0] { 1 } else { 0 };
                example(tokens, label, if i % 2 == 0 { "en" } else { "fr" })
            })
            .collect();
        let report = evaluate(&params, &dataset).unwrap();
        assert_eq!(report.overall, 1.0);
        assert!(report.per_language.values().all(|&a| a == 1.0));
    }

    #[test]
    fn evaluate_reports_per_language_and_ties_break_low() {
        let params = tiny_params(Strategy::Prompt);
        // Zero-logit model: argmax ties resolve to class 0.
        let mut cfg = tiny_config(Strategy::Full);
        cfg.num_classes = 4;
        cfg.hidden_dim = 3;
        let mut t = TensorMap::new();
        t.insert(ParamName::E, Tensor::zeros(4, 2));
        t.insert(ParamName::P, Tensor::zeros(1, 2));
        t.insert(ParamName::W1, Tensor::zeros(3, 2));
        t.insert(ParamName::B1, Tensor::zeros(3, 1));
        t.insert(ParamName::W2, Tensor::zeros(4, 3));
        t.insert(ParamName::B2, Tensor::zeros(4, 1));
        t.insert(ParamName::A, Tensor::zeros(1, 2));
        t.insert(ParamName::B, Tensor::zeros(3, 1));
        let zero = parameter_set_from_tensors(&cfg, t).unwrap();
        let balanced: Vec<Example> = (0..4).map(|y| example(&[0], y, "xx")).collect();
        let rep = evaluate(&zero, &balanced).unwrap();
        assert_eq!(rep.overall, 0.25);

        // Per-language bookkeeping.
        let data = vec![example(&[2, 3], 0, "en"), example(&[2, 3], 1, "fr")];
        let rep = evaluate(&params, &data).unwrap();
        assert_eq!(rep.per_language.len(), 2);
        assert!(rep.per_language.contains_key("en"));

        assert!(matches!(evaluate(&params, &[]), Err(Error::Input(_))));
    }
}
