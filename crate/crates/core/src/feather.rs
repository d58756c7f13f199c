//! The sparse training block: thresholded forward pass and a
//! straight-through backward pass that scales the gradients of pruned
//! weights by a constant `theta`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::thresholding::{apply_threshold, ThresholdOperator, ThresholdValue};

/// How the pruned-gradient scale `theta` is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GradScalePolicy {
    Fixed(f32),
    /// `theta = 1` below `threshold_sparsity`, `low_theta` at or above it.
    AutoStep {
        threshold_sparsity: f64,
        low_theta: f32,
    },
}

impl Default for GradScalePolicy {
    fn default() -> Self {
        GradScalePolicy::AutoStep {
            threshold_sparsity: 0.95,
            low_theta: 0.5,
        }
    }
}

impl GradScalePolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GradScalePolicy::Fixed(theta) => check_theta(theta),
            GradScalePolicy::AutoStep {
                threshold_sparsity,
                low_theta,
            } => {
                if !(threshold_sparsity > 0.0 && threshold_sparsity < 1.0) {
                    return Err(Error::contract(format!(
                        "theta step position {threshold_sparsity} outside (0, 1)"
                    )));
                }
                check_theta(low_theta)
            }
        }
    }
}

fn check_theta(theta: f32) -> Result<()> {
    if (0.0..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(Error::contract(format!("theta {theta} outside [0, 1]")))
    }
}

/// Picks `theta` for a run from its final target sparsity. Called once at
/// the start of training; the value stays fixed afterwards.
pub fn select_theta(policy: GradScalePolicy, final_sparsity: f64) -> f32 {
    match policy {
        GradScalePolicy::Fixed(theta) => theta,
        GradScalePolicy::AutoStep {
            threshold_sparsity,
            low_theta,
        } => {
            if final_sparsity < threshold_sparsity {
                1.0
            } else {
                low_theta
            }
        }
    }
}

/// Per-layer pruning state: the dense trainable weights plus everything
/// needed to produce and differentiate their thresholded view.
#[derive(Clone, Debug)]
pub struct PruneLayerState {
    pub name: String,
    pub weights: Tensor,
    threshold: Option<ThresholdValue>,
    pub operator: ThresholdOperator,
    theta: f32,
    mask: Vec<bool>,
    pub prunable: bool,
    /// Convolution kernels are candidates for the first-layer exemption.
    pub conv: bool,
}

impl PruneLayerState {
    pub fn new(name: impl Into<String>, weights: Tensor, operator: ThresholdOperator, conv: bool) -> Self {
        let mask = vec![true; weights.numel()];
        Self {
            name: name.into(),
            weights: weights.requires_grad(true),
            threshold: None,
            operator,
            theta: 1.0,
            mask,
            prunable: true,
            conv,
        }
    }

    pub fn threshold(&self) -> Option<ThresholdValue> {
        self.threshold
    }

    pub fn set_threshold(&mut self, t: ThresholdValue) {
        self.threshold = Some(t);
    }

    pub fn clear_threshold(&mut self) {
        self.threshold = None;
    }

    pub fn theta(&self) -> f32 {
        self.theta
    }

    pub fn set_theta(&mut self, theta: f32) -> Result<()> {
        check_theta(theta)?;
        self.theta = theta;
        Ok(())
    }

    /// Mask produced by the most recent [`forward`](Self::forward).
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Survivor mask for the current weights and threshold, without touching
    /// the stored mask.
    pub fn current_mask(&self) -> Vec<bool> {
        match (self.prunable, self.threshold) {
            (true, Some(t)) => self.weights.data().iter().map(|w| w.abs() > t.get()).collect(),
            _ => vec![true; self.weights.numel()],
        }
    }

    /// Thresholded weights used by the layer's computation. Refreshes the
    /// stored mask; the dense weights are left untouched.
    pub fn forward(&mut self) -> Result<Tensor> {
        if !self.prunable {
            self.mask.fill(true);
            return Ok(Tensor::from_parts(
                self.weights.shape().to_vec(),
                self.weights.data().to_vec(),
            ));
        }
        let t = self.threshold.ok_or_else(|| {
            Error::contract(format!("layer {} has no threshold assigned", self.name))
        })?;
        let (pruned, mask) = apply_threshold(self.weights.data(), t, self.operator)?;
        self.mask = mask;
        Ok(Tensor::from_parts(self.weights.shape().to_vec(), pruned))
    }

    /// Straight-through backward pass: treats thresholding as the identity
    /// and multiplies the gradient at pruned positions by `theta`. The result
    /// is installed as the dense weights' gradient and returned.
    pub fn backward(&mut self, grad_wrt_sparse: &[f32]) -> Result<&[f32]> {
        if grad_wrt_sparse.len() != self.mask.len() {
            return Err(Error::contract(format!(
                "layer {}: gradient length {} does not match mask length {}",
                self.name,
                grad_wrt_sparse.len(),
                self.mask.len()
            )));
        }
        let theta = self.theta;
        let scaled = grad_wrt_sparse
            .iter()
            .zip(&self.mask)
            .map(|(&g, &active)| if active { g } else { theta * g })
            .collect();
        self.weights.set_grad(scaled)?;
        Ok(self.weights.grad().expect("gradient was just installed"))
    }
}
