//! Learning-rate schedule and SGD with momentum.

use crate::error::{Error, Result};
use crate::model::Model;

/// Linear warmup over `warmup_steps`, then cosine decay to zero at
/// `total_steps`.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f32, warmup_steps: usize) -> f32 {
    let base = f64::from(base_lr);
    if step < warmup_steps {
        return (base * step as f64 / warmup_steps as f64) as f32;
    }
    let span = total_steps.saturating_sub(warmup_steps).max(1) as f64;
    let progress = ((step - warmup_steps) as f64 / span).min(1.0);
    (0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())) as f32
}

/// One heavy-ball update: `g = grad + wd * w; buf = momentum * buf + g;
/// w -= lr * buf`.
pub fn sgd_step(
    weights: &mut [f32],
    grad: &[f32],
    buffer: &mut [f32],
    lr: f32,
    momentum: f32,
    weight_decay: f32,
) -> Result<()> {
    if grad.len() != weights.len() || buffer.len() != weights.len() {
        return Err(Error::Dimension {
            op: "sgd",
            lhs: vec![weights.len()],
            rhs: vec![grad.len(), buffer.len()],
        });
    }
    for ((w, &g), b) in weights.iter_mut().zip(grad).zip(buffer.iter_mut()) {
        let g = g + weight_decay * *w;
        *b = momentum * *b + g;
        *w -= lr * *b;
    }
    Ok(())
}

/// Momentum buffers for every weight and bias of a model.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
    weight_buffers: Vec<Vec<f32>>,
    bias_buffers: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(model: &Model, momentum: f32, weight_decay: f32) -> Self {
        Self {
            momentum,
            weight_decay,
            weight_buffers: model.layers.iter().map(|l| vec![0.0; l.weights.numel()]).collect(),
            bias_buffers: model.biases.iter().map(|b| vec![0.0; b.numel()]).collect(),
        }
    }

    /// Applies the gradients stored on the model's weights and biases.
    /// Parameters without a gradient still receive weight decay.
    pub fn step(&mut self, model: &mut Model, lr: f32) -> Result<()> {
        let (momentum, decay) = (self.momentum, self.weight_decay);
        let tensors = model
            .layers
            .iter_mut()
            .map(|l| &mut l.weights)
            .zip(self.weight_buffers.iter_mut())
            .chain(model.biases.iter_mut().zip(self.bias_buffers.iter_mut()));
        for (tensor, buffer) in tensors {
            let grad = tensor.grad().map_or_else(|| vec![0.0; tensor.numel()], <[f32]>::to_vec);
            sgd_step(tensor.data_mut(), &grad, buffer, lr, momentum, decay)?;
            tensor.zero_grad();
        }
        Ok(())
    }
}
