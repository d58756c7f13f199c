//! A single training run and the files it leaves behind.

use std::fs;
use std::path::Path;

use feather_core::analysis::flops_count;
use feather_core::checkpoint::snapshots_to_checkpoint;
use feather_core::{train, Model};

use crate::config::RunSpec;
use crate::error::CliError;

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MASKS_FILE: &str = "masks.bin";
pub const CHECKPOINT_FILE: &str = "final.fthr";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub label: String,
    pub final_top1: f64,
    pub final_mask_sparsity: f64,
    pub dense_flops: u64,
    pub sparse_flops: u64,
}

impl RunSummary {
    fn to_csv(&self) -> String {
        format!(
            "key,value\nlabel,{}\nfinal_top1,{}\nfinal_mask_sparsity,{}\ndense_flops,{}\nsparse_flops,{}\n",
            self.label, self.final_top1, self.final_mask_sparsity, self.dense_flops, self.sparse_flops
        )
    }
}

/// Trains `spec` and writes the resolved config, per-epoch metrics, mask
/// snapshots, final checkpoint and a summary into `out`.
pub fn execute(spec: &RunSpec, out: &Path) -> Result<RunSummary, CliError> {
    if out.join(METRICS_FILE).exists() {
        return Err(CliError::Config(format!("{} already holds a run", out.display())));
    }
    fs::create_dir_all(out)?;
    fs::write(out.join(CONFIG_FILE), spec.resolved.resolved_text())?;

    let (train_set, val_set) = spec.data.load()?;
    let mut model = Model::init(spec.arch.clone(), spec.train.operator, spec.train.seed)?;
    let outcome = train(&spec.train, &mut model, &train_set, &val_set)?;

    fs::write(out.join(METRICS_FILE), outcome.metrics.to_csv())?;
    snapshots_to_checkpoint(&outcome.snapshots, &model)?.save(&out.join(MASKS_FILE))?;
    model.to_checkpoint().save(&out.join(CHECKPOINT_FILE))?;

    let flops = flops_count(&model, &model.masks())?;
    let summary = RunSummary {
        label: spec.label.clone(),
        final_top1: outcome.metrics.final_top1().unwrap_or(0.0),
        final_mask_sparsity: outcome.final_mask_sparsity,
        dense_flops: flops.dense_total,
        sparse_flops: flops.sparse_total,
    };
    fs::write(out.join(SUMMARY_FILE), summary.to_csv())?;
    Ok(summary)
}
