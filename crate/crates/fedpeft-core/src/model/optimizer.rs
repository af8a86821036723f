//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{ParameterSet, TensorMap};

/// First/second moment accumulators for the trainable tensors plus the
/// hyperparameters. Frozen tensors have no state here by construction.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    step: u64,
    first_moment: TensorMap,
    second_moment: TensorMap,
}

impl OptimizerState {
    /// Fresh state for the trainable subset of `params`, with the standard
    /// defaults (beta1 0.9, beta2 0.999, eps 1e-8, weight decay 0.01).
    pub fn new(params: &ParameterSet, lr: f64) -> Self {
        let moments: TensorMap = params
            .trainable_set()
            .iter()
            .map(|&n| {
                let (r, c) = params.tensor(n).shape();
                (n, Tensor::zeros(r, c))
            })
            .collect();
        OptimizerState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            step: 0,
            first_moment: moments.clone(),
            second_moment: moments,
        }
    }

    /// Completed update count; also the dropout-mask index for the next step.
    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One AdamW update over the supplied gradients.
///
/// Bias-corrected moments, decay applied to the pre-update value:
/// `theta -= lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * theta`.
/// Gradients must be keyed by trainable tensors only; anything else is a
/// contract violation, because it would silently thaw a frozen tensor.
pub fn adamw_step(
    params: &mut ParameterSet,
    grads: &TensorMap,
    opt: &mut OptimizerState,
) -> Result<()> {
    for (&name, grad) in grads {
        if !params.is_trainable(name) {
            return Err(Error::Contract(format!(
                "gradient supplied for frozen tensor {name}"
            )));
        }
        if grad.shape() != params.tensor(name).shape() {
            return Err(Error::Contract(format!(
                "gradient shape {:?} does not match tensor {name} {:?}",
                grad.shape(),
                params.tensor(name).shape()
            )));
        }
    }

    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);

    for (&name, grad) in grads {
        let m = opt.first_moment.get_mut(&name).expect("trainable moment");
        let v = opt.second_moment.get_mut(&name).expect("trainable moment");
        let theta = params.tensor_mut(name);
        for ((x, g), (mi, vi)) in theta
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *mi = opt.beta1 * *mi + (1.0 - opt.beta1) * g;
            *vi = opt.beta2 * *vi + (1.0 - opt.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            let update = opt.lr * m_hat / (v_hat.sqrt() + opt.epsilon);
            let decay = opt.lr * opt.weight_decay * *x;
            *x = *x - update - decay;
        }
    }
    Ok(())
}
