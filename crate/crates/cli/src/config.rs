//! Flat `key = value` run configuration with dotted section keys.
//!
//! ```text
//! # comments run to the end of the line
//! model.arch = mlp:784-300-100-10
//! prune.operator = powerp
//! prune.p = 3
//! ```
//!
//! Every key has a default, so an empty file describes a complete run.
//! Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use feather_core::backbones::{Backbone, BackboneKind, SparsitySchedule};
use feather_core::data::{load_idx, synth_blobs, BlobSpec, Dataset};
use feather_core::{Architecture, Exec, GradScalePolicy, ThresholdOperator, TrainConfig};

use crate::error::CliError;

/// Keys in resolved order, with their defaults.
const DEFAULTS: &[(&str, &str)] = &[
    ("run.label", "run"),
    ("run.seed", "0"),
    ("run.parallel", "true"),
    ("model.arch", "mlp:784-300-100-10"),
    ("data.kind", "blobs"),
    ("data.classes", "10"),
    ("data.dims", "784"),
    ("data.samples", "5000"),
    ("data.noise", "0.2"),
    ("data.seed", "0"),
    ("data.images", ""),
    ("data.labels", ""),
    ("data.split", "0.8"),
    ("train.epochs", "20"),
    ("train.batch_size", "64"),
    ("train.lr", "0.05"),
    ("train.momentum", "0.9"),
    ("train.weight_decay", "0.0005"),
    ("train.label_smoothing", "0.1"),
    ("train.warmup_epochs", "0"),
    ("prune.sparsity", "0.9"),
    ("prune.ramp", "0.5"),
    ("prune.backbone", "global"),
    ("prune.exempt_first_conv", "default"),
    ("prune.operator", "powerp"),
    ("prune.p", "3"),
    ("prune.theta", "auto"),
    ("prune.theta_switch", "0.95"),
    ("prune.theta_low", "0.5"),
];

/// Raw key/value pairs after merging file and command-line overrides.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut map = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            let key = key.trim();
            if map.entries.contains_key(key) {
                return Err(CliError::Config(format!("line {}: duplicate key {key}", i + 1)));
            }
            map.set(key, value.trim())?;
        }
        Ok(map)
    }

    /// Applies a `key=value` override.
    pub fn apply(&mut self, assignment: &str) -> Result<(), CliError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !DEFAULTS.iter().any(|(k, _)| *k == key) {
            return Err(CliError::Config(format!("unknown key {key}")));
        }
        self.entries.insert(key.to_owned(), value.to_owned());
        Ok(())
    }

    fn get(&self, key: &str) -> &str {
        self.entries.get(key).map(String::as_str).unwrap_or_else(|| {
            DEFAULTS
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .expect("key is listed in DEFAULTS")
        })
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let raw = self.get(key);
        raw.parse()
            .map_err(|e| CliError::Config(format!("{key} = {raw:?}: {e}")))
    }

    /// Every key with its effective value, one per line, in a form that
    /// parses back to the same run.
    pub fn resolved_text(&self) -> String {
        DEFAULTS
            .iter()
            .map(|(k, _)| format!("{k} = {}\n", self.get(k)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetDescriptor {
    Blobs { spec: BlobSpec, split: f64 },
    Idx { images: PathBuf, labels: PathBuf, classes: usize, split: f64 },
}

impl DatasetDescriptor {
    /// Loads the data and returns the (train, validation) split.
    pub fn load(&self) -> Result<(Dataset, Dataset), CliError> {
        let (data, split) = match self {
            DatasetDescriptor::Blobs { spec, split } => (synth_blobs(spec)?, *split),
            DatasetDescriptor::Idx {
                images,
                labels,
                classes,
                split,
            } => (load_idx(images, labels, *classes)?, *split),
        };
        Ok(data.split(split)?)
    }
}

/// Everything needed to reproduce one training run.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub label: String,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub data: DatasetDescriptor,
    pub resolved: ConfigMap,
}

impl RunSpec {
    pub fn from_map(map: &ConfigMap) -> Result<Self, CliError> {
        let label = map.get("run.label").to_owned();
        if label.is_empty() {
            return Err(CliError::Config("run.label must not be empty".into()));
        }
        let arch: Architecture = map.parsed("model.arch")?;
        let seed: u64 = map.parsed("run.seed")?;
        let epochs: usize = map.parsed("train.epochs")?;

        let split: f64 = map.parsed("data.split")?;
        if !(split > 0.0 && split < 1.0) {
            return Err(CliError::Config(format!("data.split = {split} outside (0, 1)")));
        }
        let data = match map.get("data.kind") {
            "blobs" => DatasetDescriptor::Blobs {
                spec: BlobSpec {
                    classes: map.parsed("data.classes")?,
                    dims: map.parsed("data.dims")?,
                    samples: map.parsed("data.samples")?,
                    noise: map.parsed("data.noise")?,
                    seed: map.parsed("data.seed")?,
                },
                split,
            },
            "idx" => {
                let (images, labels) = (map.get("data.images"), map.get("data.labels"));
                if images.is_empty() || labels.is_empty() {
                    return Err(CliError::Config("data.kind = idx needs data.images and data.labels".into()));
                }
                DatasetDescriptor::Idx {
                    images: images.into(),
                    labels: labels.into(),
                    classes: map.parsed("data.classes")?,
                    split,
                }
            }
            other => return Err(CliError::Config(format!("data.kind = {other:?}: expected blobs or idx"))),
        };

        let operator = match map.get("prune.operator") {
            "powerp" => ThresholdOperator::power(map.parsed("prune.p")?)?,
            other => other
                .parse()
                .map_err(|e| CliError::Config(format!("prune.operator = {other:?}: {e}")))?,
        };
        let kind: BackboneKind = map.parsed("prune.backbone")?;
        let mut backbone = Backbone::new(kind);
        match map.get("prune.exempt_first_conv") {
            "default" => {}
            _ => backbone.exempt_first_conv = map.parsed("prune.exempt_first_conv")?,
        }
        let grad_policy = match map.get("prune.theta") {
            "auto" => GradScalePolicy::AutoStep {
                threshold_sparsity: map.parsed("prune.theta_switch")?,
                low_theta: map.parsed("prune.theta_low")?,
            },
            _ => GradScalePolicy::Fixed(map.parsed("prune.theta")?),
        };
        let parallel: bool = map.parsed("run.parallel")?;
        let train = TrainConfig {
            epochs,
            batch_size: map.parsed("train.batch_size")?,
            lr: map.parsed("train.lr")?,
            momentum: map.parsed("train.momentum")?,
            weight_decay: map.parsed("train.weight_decay")?,
            label_smoothing: map.parsed("train.label_smoothing")?,
            seed,
            warmup_epochs: map.parsed("train.warmup_epochs")?,
            schedule: SparsitySchedule::new(map.parsed("prune.sparsity")?, epochs.max(1), map.parsed("prune.ramp")?)?,
            backbone,
            operator,
            grad_policy,
            exec: if parallel { Exec::Parallel } else { Exec::Sequential },
        };
        train.validate()?;
        Ok(Self {
            label,
            arch,
            train,
            data,
            resolved: map.clone(),
        })
    }
}
