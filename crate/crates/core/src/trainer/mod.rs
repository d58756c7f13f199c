//! Deterministic training loop.
//!
//! Each epoch assigns thresholds for the scheduled sparsity, walks a seeded
//! permutation of the training set in mini-batches (thresholded forward,
//! straight-through backward, SGD update), evaluates top-1 on the sparse
//! weights and snapshots the survivor masks.

mod optim;

use std::fmt::Write as _;

pub use optim::{cosine_lr, sgd_step, Sgd};

use crate::analysis::{stability_curve, MaskSnapshot};
use crate::backbones::{Backbone, BackboneKind, SparsitySchedule};
use crate::checkpoint::mask_sparsity;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::feather::{select_theta, GradScalePolicy};
use crate::model::{LayerParams, Model};
use crate::par::Exec;
use crate::rng::epoch_permutation;
use crate::tensor::Tape;
use crate::thresholding::{sparsity_at, ThresholdOperator, ThresholdValue};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub label_smoothing: f32,
    pub seed: u64,
    pub warmup_epochs: usize,
    pub schedule: SparsitySchedule,
    pub backbone: Backbone,
    pub operator: ThresholdOperator,
    pub grad_policy: GradScalePolicy,
    /// Intra-op execution mode. Results do not depend on it.
    pub exec: Exec,
}

impl TrainConfig {
    /// Small settings that finish in seconds on synthetic data.
    pub fn desk(final_sparsity: f64, epochs: usize) -> Result<Self> {
        Ok(Self {
            epochs,
            batch_size: 64,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            label_smoothing: 0.1,
            seed: 0,
            warmup_epochs: 0,
            schedule: SparsitySchedule::new(final_sparsity, epochs, 0.5)?,
            backbone: Backbone::new(BackboneKind::Global),
            operator: ThresholdOperator::default(),
            grad_policy: GradScalePolicy::default(),
            exec: Exec::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Contract(msg));
        if self.epochs == 0 || self.batch_size == 0 {
            return fail(format!(
                "epochs ({}) and batch size ({}) must be positive",
                self.epochs, self.batch_size
            ));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail(format!("learning rate {} must be finite and nonnegative", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail(format!("weight decay {} must be finite and nonnegative", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return fail(format!("label smoothing {} outside [0, 1)", self.label_smoothing));
        }
        if self.warmup_epochs >= self.epochs && self.warmup_epochs > 0 {
            return fail(format!(
                "warmup ({}) must be shorter than training ({})",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.schedule.total_epochs() != self.epochs {
            return fail(format!(
                "schedule spans {} epochs but training runs {}",
                self.schedule.total_epochs(),
                self.epochs
            ));
        }
        self.grad_policy.validate()
    }

    pub fn theta(&self) -> f32 {
        select_theta(self.grad_policy, self.schedule.final_sparsity())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f32,
    /// Percent, 0 to 100.
    pub val_top1: f64,
    pub requested_sparsity: f64,
    /// Measured on the thresholded weights right after assignment.
    pub achieved_sparsity: f64,
    /// Learning rate of the epoch's first step.
    pub lr: f32,
    pub theta: f32,
    pub mask_pearson_vs_final: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub records: Vec<EpochRecord>,
}

impl RunMetrics {
    pub const CSV_HEADER: &'static str =
        "epoch,train_loss,val_top1,requested_sparsity,achieved_sparsity,lr,theta,mask_pearson_vs_final";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.epoch,
                r.train_loss,
                r.val_top1,
                r.requested_sparsity,
                r.achieved_sparsity,
                r.lr,
                r.theta,
                r.mask_pearson_vs_final
            );
        }
        out
    }

    pub fn final_top1(&self) -> Option<f64> {
        self.records.last().map(|r| r.val_top1)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub metrics: RunMetrics,
    pub snapshots: Vec<MaskSnapshot>,
    /// Sparsity of the final weights under the final thresholds.
    pub final_mask_sparsity: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Sparse,
    Dense,
}

/// Sparse training with thresholded weights and straight-through gradients.
pub fn train(config: &TrainConfig, model: &mut Model, train_set: &Dataset, val_set: &Dataset) -> Result<TrainOutcome> {
    run(config, model, train_set, val_set, Mode::Sparse)
}

/// Plain dense training with the same data order, optimizer and schedule of
/// learning rates; the sparsity settings of `config` are ignored.
pub fn train_dense(config: &TrainConfig, model: &mut Model, train_set: &Dataset, val_set: &Dataset) -> Result<TrainOutcome> {
    run(config, model, train_set, val_set, Mode::Dense)
}

fn run(config: &TrainConfig, model: &mut Model, train_set: &Dataset, val_set: &Dataset, mode: Mode) -> Result<TrainOutcome> {
    config.validate()?;
    check_dataset(model, train_set)?;
    check_dataset(model, val_set)?;
    let theta = match mode {
        Mode::Sparse => config.theta(),
        Mode::Dense => 1.0,
    };
    for layer in &mut model.layers {
        layer.operator = config.operator;
        layer.set_theta(theta)?;
        if mode == Mode::Dense {
            layer.set_threshold(ThresholdValue::ZERO);
        }
    }
    let steps_per_epoch = train_set.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let warmup_steps = steps_per_epoch * config.warmup_epochs;
    let input_shape = model.arch().input_shape().to_vec();
    let mut opt = Sgd::new(model, config.momentum, config.weight_decay);
    let mut records = Vec::with_capacity(config.epochs);
    let mut snapshots = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let (requested, achieved) = match mode {
            Mode::Sparse => {
                let s = config.schedule.sparsity_at(epoch)?;
                (s, config.backbone.assign(&mut model.layers, s)?.achieved_sparsity())
            }
            Mode::Dense => (0.0, zero_fraction(model)),
        };
        let order = epoch_permutation(config.seed, epoch, train_set.len());
        let mut loss_sum = 0.0f64;
        let mut first_lr = 0.0;
        for (batch, indices) in order.chunks(config.batch_size).enumerate() {
            let step = epoch * steps_per_epoch + batch;
            let lr = cosine_lr(step, total_steps, config.lr, warmup_steps);
            if batch == 0 {
                first_lr = lr;
            }
            let (x, labels) = train_set.batch(indices, &input_shape)?;
            let loss = train_step(config, model, mode, x, &labels)
                .and_then(|loss| {
                    opt.step(model, lr)?;
                    Ok(loss)
                })
                .map_err(|e| diverged(e, epoch, batch, model))?;
            if !loss.is_finite() || !model_is_finite(model) {
                return Err(Error::Diverged {
                    epoch,
                    batch,
                    loss,
                    layer_norms: model.weight_norms(),
                });
            }
            loss_sum += f64::from(loss) * indices.len() as f64;
        }
        let val_top1 = evaluate_with(model, val_set, config.exec)?;
        snapshots.push(MaskSnapshot {
            epoch,
            layers: model.masks(),
        });
        records.push(EpochRecord {
            epoch,
            train_loss: (loss_sum / train_set.len() as f64) as f32,
            val_top1,
            requested_sparsity: requested,
            achieved_sparsity: achieved,
            lr: first_lr,
            theta,
            mask_pearson_vs_final: 0.0,
        });
    }

    let curve = stability_curve(&snapshots)?;
    for (record, (_, r)) in records.iter_mut().zip(curve) {
        record.mask_pearson_vs_final = r;
    }
    let final_mask_sparsity = mask_sparsity(
        model
            .masks()
            .iter()
            .zip(&model.layers)
            .filter(|(_, l)| l.prunable)
            .map(|(m, _)| m.as_slice()),
    );
    Ok(TrainOutcome {
        metrics: RunMetrics { records },
        snapshots,
        final_mask_sparsity,
    })
}

/// Forward and backward for one batch; leaves gradients on the model.
fn train_step(config: &TrainConfig, model: &mut Model, mode: Mode, x: crate::tensor::Tensor, labels: &[usize]) -> Result<f32> {
    let mut tape = Tape::with_exec(config.exec);
    let params: Vec<LayerParams> = match mode {
        Mode::Dense => model.dense_params(&mut tape),
        Mode::Sparse => {
            let mut params = Vec::with_capacity(model.layers.len());
            for (layer, bias) in model.layers.iter_mut().zip(&model.biases) {
                let sparse = layer.forward()?.requires_grad(true);
                params.push(LayerParams {
                    weight: tape.param(sparse),
                    bias: tape.param(bias.clone()),
                });
            }
            params
        }
    };
    let input = tape.leaf(x);
    let logits = model.forward(&mut tape, input, &params)?;
    let loss = tape.softmax_cross_entropy(logits, labels, config.label_smoothing)?;
    tape.backward(loss)?;
    let loss_value = tape.value(loss).data()[0];
    for ((layer, bias), p) in model.layers.iter_mut().zip(model.biases.iter_mut()).zip(&params) {
        let gw = tape.grad(p.weight).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; layer.weights.numel()]);
        match mode {
            Mode::Sparse => {
                layer.backward(&gw)?;
            }
            Mode::Dense => layer.weights.set_grad(gw)?,
        }
        if let Some(gb) = tape.grad(p.bias) {
            bias.set_grad(gb.to_vec())?;
        }
    }
    Ok(loss_value)
}

fn diverged(err: Error, epoch: usize, batch: usize, model: &Model) -> Error {
    match err {
        Error::Data(_) => Error::Diverged {
            epoch,
            batch,
            loss: f32::NAN,
            layer_norms: model.weight_norms(),
        },
        other => other,
    }
}

fn model_is_finite(model: &Model) -> bool {
    model.layers.iter().all(|l| l.weights.data().iter().all(|w| w.is_finite()))
        && model.biases.iter().all(|b| b.data().iter().all(|w| w.is_finite()))
}

fn zero_fraction(model: &Model) -> f64 {
    let (mut zeros, mut total) = (0.0, 0usize);
    for l in model.layers.iter().filter(|l| l.prunable) {
        let n = l.weights.numel();
        zeros += sparsity_at(l.weights.data(), ThresholdValue::ZERO) * n as f64;
        total += n;
    }
    if total == 0 {
        0.0
    } else {
        zeros / total as f64
    }
}

fn check_dataset(model: &Model, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::contract("dataset is empty"));
    }
    let want: usize = model.arch().input_shape().iter().product();
    if data.sample_len() != want {
        return Err(Error::Dimension {
            op: "dataset vs model input",
            lhs: model.arch().input_shape().to_vec(),
            rhs: data.features().shape()[1..].to_vec(),
        });
    }
    if data.classes() != model.arch().classes() {
        return Err(Error::contract(format!(
            "dataset has {} classes, model predicts {}",
            data.classes(),
            model.arch().classes()
        )));
    }
    Ok(())
}

/// Top-1 accuracy in percent using the thresholded weights.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<f64> {
    evaluate_with(model, data, Exec::default())
}

pub fn evaluate_with(model: &Model, data: &Dataset, exec: Exec) -> Result<f64> {
    check_dataset(model, data)?;
    let input_shape = model.arch().input_shape().to_vec();
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0usize;
    for chunk in indices.chunks(256) {
        let mut tape = Tape::with_exec(exec);
        let params = model.sparse_params(&mut tape);
        let (x, labels) = data.batch(chunk, &input_shape)?;
        let input = tape.leaf(x);
        let logits = model.forward(&mut tape, input, &params)?;
        let out = tape.value(logits);
        let classes = out.shape()[1];
        for (row, &label) in out.data().chunks(classes).zip(&labels) {
            if argmax(row) == label {
                correct += 1;
            }
        }
    }
    Ok(100.0 * correct as f64 / data.len() as f64)
}

/// Index of the first maximum.
fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
