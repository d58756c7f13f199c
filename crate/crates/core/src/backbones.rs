//! Sparsity schedule and per-epoch threshold assignment.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::feather::PruneLayerState;
use crate::thresholding::{prune_count, select_threshold, ThresholdValue};

/// Cubic ramp from 0 to `final_sparsity`, reached after
/// `ramp_fraction * total_epochs` epochs and held afterwards:
///
/// `s(e) = S_f * (1 - (1 - min(e / (ramp_fraction * E), 1))^3)`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparsitySchedule {
    final_sparsity: f64,
    total_epochs: usize,
    ramp_fraction: f64,
}

impl SparsitySchedule {
    pub fn new(final_sparsity: f64, total_epochs: usize, ramp_fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&final_sparsity) {
            return Err(Error::contract(format!(
                "final sparsity {final_sparsity} outside [0, 1)"
            )));
        }
        if total_epochs == 0 {
            return Err(Error::contract("schedule needs at least one epoch"));
        }
        if !(ramp_fraction > 0.0 && ramp_fraction <= 1.0) {
            return Err(Error::contract(format!(
                "ramp fraction {ramp_fraction} outside (0, 1]"
            )));
        }
        Ok(Self {
            final_sparsity,
            total_epochs,
            ramp_fraction,
        })
    }

    pub fn final_sparsity(&self) -> f64 {
        self.final_sparsity
    }

    pub fn total_epochs(&self) -> usize {
        self.total_epochs
    }

    pub fn ramp_fraction(&self) -> f64 {
        self.ramp_fraction
    }

    /// Requested sparsity at the start of `epoch`.
    pub fn sparsity_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(Error::Index {
                what: "schedule epoch",
                index: epoch,
                bound: self.total_epochs,
            });
        }
        let ramp = self.ramp_fraction * self.total_epochs as f64;
        let progress = (epoch as f64 / ramp).min(1.0);
        let remaining = 1.0 - progress;
        Ok(self.final_sparsity * (1.0 - remaining * remaining * remaining))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackboneKind {
    /// One threshold over the pooled magnitudes of every prunable layer.
    Global,
    /// The same sparsity ratio enforced independently in every layer.
    UniformLayerwise,
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackboneKind::Global => "global",
            BackboneKind::UniformLayerwise => "uniform",
        })
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "global" => Ok(BackboneKind::Global),
            "uniform" | "layerwise" | "gmp" => Ok(BackboneKind::UniformLayerwise),
            other => Err(Error::contract(format!("unknown backbone {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Backbone {
    pub kind: BackboneKind,
    /// Keep the first prunable convolution dense (threshold 0).
    pub exempt_first_conv: bool,
}

impl Backbone {
    /// Backbone with its default exemption: uniform keeps the first
    /// convolution dense, global does not.
    pub fn new(kind: BackboneKind) -> Self {
        Self {
            kind,
            exempt_first_conv: kind == BackboneKind::UniformLayerwise,
        }
    }

    pub fn assign(&self, layers: &mut [PruneLayerState], sparsity: f64) -> Result<Assignment> {
        match self.kind {
            BackboneKind::Global => assign_global(layers, sparsity, self.exempt_first_conv),
            BackboneKind::UniformLayerwise => {
                assign_uniform(layers, sparsity, self.exempt_first_conv)
            }
        }
    }
}

/// Outcome of a threshold assignment over all prunable layers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Assignment {
    pub pruned: usize,
    pub total: usize,
}

impl Assignment {
    pub fn achieved_sparsity(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.pruned as f64 / self.total as f64
        }
    }
}

/// Index of the layer that the first-convolution exemption applies to.
fn exempt_index(layers: &[PruneLayerState], exempt_first_conv: bool) -> Option<usize> {
    if !exempt_first_conv {
        return None;
    }
    layers.iter().position(|l| l.prunable).filter(|&i| layers[i].conv)
}

fn check_inputs(layers: &[PruneLayerState], sparsity: f64) -> Result<()> {
    if !layers.iter().any(|l| l.prunable) {
        return Err(Error::contract("no prunable layers to assign thresholds to"));
    }
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::contract(format!("sparsity {sparsity} outside [0, 1)")));
    }
    Ok(())
}

fn count_pruned(layers: &[PruneLayerState]) -> Assignment {
    let mut pruned = 0;
    let mut total = 0;
    for l in layers.iter().filter(|l| l.prunable) {
        let t = l.threshold().unwrap_or_default().get();
        pruned += l.weights.data().iter().filter(|w| w.abs() <= t).count();
        total += l.weights.numel();
    }
    Assignment { pruned, total }
}

/// Pools `|w|` over every prunable (non-exempt) layer, selects a single
/// threshold for the requested sparsity and writes it into each layer.
pub fn assign_thresholds_global(layers: &mut [PruneLayerState], sparsity: f64) -> Result<Assignment> {
    assign_global(layers, sparsity, false)
}

/// Selects a threshold per layer so every prunable layer reaches the same
/// sparsity. The exempt first convolution, if any, gets `T = 0`.
pub fn assign_thresholds_uniform(
    layers: &mut [PruneLayerState],
    sparsity: f64,
    exempt_first_conv: bool,
) -> Result<Assignment> {
    assign_uniform(layers, sparsity, exempt_first_conv)
}

fn assign_global(layers: &mut [PruneLayerState], sparsity: f64, exempt_first_conv: bool) -> Result<Assignment> {
    check_inputs(layers, sparsity)?;
    let exempt = exempt_index(layers, exempt_first_conv);
    let pooled: Vec<f32> = layers
        .iter()
        .enumerate()
        .filter(|(i, l)| l.prunable && Some(*i) != exempt)
        .flat_map(|(_, l)| l.weights.data().iter().map(|w| w.abs()))
        .collect();
    let t = if pooled.is_empty() {
        ThresholdValue::ZERO
    } else {
        select_threshold(&pooled, sparsity)?
    };
    for (i, l) in layers.iter_mut().enumerate().filter(|(_, l)| l.prunable) {
        l.set_threshold(if Some(i) == exempt { ThresholdValue::ZERO } else { t });
    }
    Ok(count_pruned(layers))
}

fn assign_uniform(layers: &mut [PruneLayerState], sparsity: f64, exempt_first_conv: bool) -> Result<Assignment> {
    check_inputs(layers, sparsity)?;
    let exempt = exempt_index(layers, exempt_first_conv);
    for (i, l) in layers.iter_mut().enumerate().filter(|(_, l)| l.prunable) {
        let t = if Some(i) == exempt {
            ThresholdValue::ZERO
        } else {
            let mags: Vec<f32> = l.weights.data().iter().map(|w| w.abs()).collect();
            select_threshold(&mags, sparsity)?
        };
        l.set_threshold(t);
    }
    Ok(count_pruned(layers))
}

/// Smallest and largest sparsity a threshold assignment may reach on
/// `magnitudes`: `[k/N, (k + ties)/N]` with ties counted at rank `k`.
pub fn attainable_window(magnitudes: &[f32], sparsity: f64) -> (f64, f64) {
    let n = magnitudes.len();
    let k = prune_count(sparsity, n);
    if k == 0 {
        return (0.0, magnitudes.iter().filter(|&&m| m == 0.0).count() as f64 / n as f64);
    }
    let mut sorted = magnitudes.to_vec();
    sorted.sort_by(f32::total_cmp);
    let kth = sorted[k - 1];
    let ties = sorted[k..].iter().take_while(|&&m| m == kth).count();
    (k as f64 / n as f64, (k + ties) as f64 / n as f64)
}
