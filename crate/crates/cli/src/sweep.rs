//! Cross-product sweeps over config keys and seeds.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::config::{ConfigMap, RunSpec};
use crate::error::CliError;
use crate::run::{execute, RunSummary};

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const PLOT_FILE: &str = "plot.csv";

/// One swept key, written `key=v1,v2,...`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

impl FromStr for Axis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        let (key, values) = s
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("axis {s:?} is not key=v1,v2,...")))?;
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_owned()).collect();
        if values.iter().any(String::is_empty) {
            return Err(CliError::Config(format!("axis {s:?} has an empty value")));
        }
        Ok(Self {
            key: key.trim().to_owned(),
            values,
        })
    }
}

/// Axis values of one cell, in axis order.
fn cells(axes: &[Axis]) -> Vec<Vec<String>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut cell = prefix.clone();
                    cell.push(v.clone());
                    cell
                })
            })
            .collect()
    })
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub values: Vec<String>,
    pub runs: Vec<Result<RunSummary, String>>,
}

impl CellResult {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.is_err()).count()
    }

    fn stat(&self, f: impl Fn(&RunSummary) -> f64) -> (f64, f64) {
        let xs: Vec<f64> = self.runs.iter().filter_map(|r| r.as_ref().ok()).map(f).collect();
        mean_std(&xs)
    }
}

/// Mean and sample standard deviation; `NaN` mean for no samples.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every cell of the cross product of `axes` once per seed, writing
/// each run to `out/cellNNN-seedS` plus `aggregate.csv` and `plot.csv`.
/// Failed runs are recorded and the sweep carries on.
pub fn sweep(base: &ConfigMap, axes: &[Axis], seeds: &[u64], jobs: usize, out: &Path) -> Result<Vec<CellResult>, CliError> {
    if axes.is_empty() || seeds.is_empty() {
        return Err(CliError::Config("a sweep needs at least one axis and one seed".into()));
    }
    let grid = cells(axes);
    let mut specs = Vec::new();
    for (c, values) in grid.iter().enumerate() {
        for &seed in seeds {
            let mut map = base.clone();
            for (axis, value) in axes.iter().zip(values) {
                map.set(&axis.key, value)?;
            }
            map.set("run.seed", &seed.to_string())?;
            map.set("run.label", &format!("cell{c:03}-seed{seed}"))?;
            specs.push((c, RunSpec::from_map(&map)?));
        }
    }
    fs::create_dir_all(out)?;

    let run_one = |(_, spec): &(usize, RunSpec)| -> Result<RunSummary, String> {
        let result = execute(spec, &out.join(&spec.label)).map_err(|e| e.to_string());
        match &result {
            Ok(s) => eprintln!("{}: top-1 {:.2}%, sparsity {:.4}", s.label, s.final_top1, s.final_mask_sparsity),
            Err(e) => eprintln!("{}: {e}", spec.label),
        }
        result
    };
    let outcomes = run_all(&specs, jobs, run_one)?;

    let mut results: Vec<CellResult> = grid
        .into_iter()
        .map(|values| CellResult {
            values,
            runs: Vec::new(),
        })
        .collect();
    for ((c, _), outcome) in specs.iter().zip(outcomes) {
        results[*c].runs.push(outcome);
    }
    fs::write(out.join(AGGREGATE_FILE), aggregate_csv(axes, &results))?;
    fs::write(out.join(PLOT_FILE), plot_csv(axes, &results))?;
    Ok(results)
}

#[cfg(feature = "parallel")]
fn run_all<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Result<Vec<R>, CliError> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Run(e.to_string()))?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}

#[cfg(not(feature = "parallel"))]
fn run_all<T: Sync, R: Send>(items: &[T], _jobs: usize, f: impl Fn(&T) -> R + Sync) -> Result<Vec<R>, CliError> {
    Ok(items.iter().map(f).collect())
}

pub fn aggregate_csv(axes: &[Axis], results: &[CellResult]) -> String {
    let mut out = String::new();
    for axis in axes {
        let _ = write!(out, "{},", axis.key);
    }
    out.push_str("runs,failures,top1_mean,top1_std,sparsity_mean,sparsity_std\n");
    for cell in results {
        let (top1, top1_sd) = cell.stat(|s| s.final_top1);
        let (sp, sp_sd) = cell.stat(|s| s.final_mask_sparsity);
        let _ = writeln!(
            out,
            "{},{},{},{top1},{top1_sd},{sp},{sp_sd}",
            cell.values.join(","),
            cell.runs.len(),
            cell.failures()
        );
    }
    out
}

/// One series per combination of all axes but the last, with the last axis
/// as `x`.
pub fn plot_csv(axes: &[Axis], results: &[CellResult]) -> String {
    let mut out = String::from("series,x,top1_mean,top1_std\n");
    let last = axes.len() - 1;
    for cell in results {
        let series = if last == 0 {
            "all".to_owned()
        } else {
            axes[..last]
                .iter()
                .zip(&cell.values)
                .map(|(a, v)| format!("{}={v}", a.key))
                .collect::<Vec<_>>()
                .join(";")
        };
        let (mean, sd) = cell.stat(|s| s.final_top1);
        let _ = writeln!(out, "{series},{},{mean},{sd}", cell.values[last]);
    }
    out
}
