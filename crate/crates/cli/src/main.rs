//! `feather`: train, evaluate and sweep sparse networks.

mod config;
mod error;
mod run;
mod sweep;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use feather_core::analysis::{curve_csv, flops_count, stability_curve};
use feather_core::checkpoint::{snapshots_from_checkpoint, Checkpoint};
use feather_core::trainer::evaluate;
use feather_core::Model;

use crate::config::{ConfigMap, RunSpec};
use crate::error::CliError;
use crate::sweep::Axis;

#[derive(Parser, Debug)]
#[command(name = "feather", version, about = "Sparse training with power-p thresholding")]
struct Cli {
    /// Run configuration (flat `key = value` file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (train, sweep) or file (other commands).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override, repeatable: `--set prune.p=4`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one configuration.
    Train,
    /// Top-1 accuracy of a checkpoint on the configured validation split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train the cross product of the given axes for every seed.
    Sweep {
        /// `key=v1,v2,...`, repeatable; the last axis becomes the plot x axis.
        #[arg(long = "axis", required = true)]
        axes: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Runs executed concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Mask stability curve from a run's `masks.bin`.
    AnalyzeMasks {
        #[arg(long)]
        masks: PathBuf,
    },
    /// Dense and sparse FLOPs per layer of the configured architecture.
    Flops {
        /// Take masks from this checkpoint instead of counting dense.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("feather: {e}");
            e.exit_code()
        }
    }
}

fn config_map(cli: &Cli) -> Result<ConfigMap, CliError> {
    let mut map = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            ConfigMap::parse(&text)?
        }
        None => ConfigMap::default(),
    };
    for o in &cli.overrides {
        map.apply(o)?;
    }
    if let Some(seed) = cli.seed {
        map.set("run.seed", &seed.to_string())?;
    }
    Ok(map)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<ExitCode, CliError> {
    let map = config_map(cli)?;
    match &cli.command {
        Command::Train => {
            let out = cli
                .out
                .as_deref()
                .ok_or_else(|| CliError::Config("train needs --out".into()))?;
            let spec = RunSpec::from_map(&map)?;
            print!("{}", map.resolved_text());
            let summary = run::execute(&spec, out)?;
            println!(
                "{}: top-1 {:.2}%, mask sparsity {:.4}, FLOPs {} of {} dense",
                summary.label, summary.final_top1, summary.final_mask_sparsity, summary.sparse_flops, summary.dense_flops
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { checkpoint } => {
            let spec = RunSpec::from_map(&map)?;
            let mut model = Model::init(spec.arch.clone(), spec.train.operator, spec.train.seed)?;
            model.load_checkpoint(&Checkpoint::load(checkpoint)?)?;
            let (_, val_set) = spec.data.load()?;
            let top1 = evaluate(&model, &val_set)?;
            emit(cli.out.as_deref(), &format!("metric,value\nval_top1,{top1}\n"))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { axes, seeds, jobs } => {
            let out = cli
                .out
                .as_deref()
                .ok_or_else(|| CliError::Config("sweep needs --out".into()))?;
            let axes: Vec<Axis> = axes.iter().map(|a| a.parse()).collect::<Result<_, _>>()?;
            let results = sweep::sweep(&map, &axes, seeds, *jobs, out)?;
            let failed: usize = results.iter().map(|c| c.failures()).sum();
            if failed > 0 {
                eprintln!("feather: {failed} run(s) failed; see {}", out.join(sweep::AGGREGATE_FILE).display());
                return Ok(ExitCode::from(1));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::AnalyzeMasks { masks } => {
            let snapshots = snapshots_from_checkpoint(&Checkpoint::load(masks)?)?;
            emit(cli.out.as_deref(), &curve_csv(&stability_curve(&snapshots)?))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Flops { checkpoint } => {
            let spec = RunSpec::from_map(&map)?;
            let model = Model::init(spec.arch.clone(), spec.train.operator, 0)?;
            let masks: Vec<Vec<bool>> = match checkpoint {
                Some(path) => {
                    let ckpt = Checkpoint::load(path)?;
                    let by_name = ckpt.masks();
                    model
                        .layers
                        .iter()
                        .map(|l| {
                            by_name
                                .iter()
                                .find(|(name, _)| *name == l.name)
                                .map(|(_, m)| m.clone())
                                .ok_or_else(|| CliError::Config(format!("checkpoint has no mask for {}", l.name)))
                        })
                        .collect::<Result<_, _>>()?
                }
                None => model.layers.iter().map(|l| vec![true; l.weights.numel()]).collect(),
            };
            emit(cli.out.as_deref(), &flops_count(&model, &masks)?.to_csv())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}
