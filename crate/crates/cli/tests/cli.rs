use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
# four blobs in eight dimensions
model.arch = mlp:8-16-4
data.classes = 4
data.dims = 8
data.samples = 200
data.noise = 0.3
train.epochs = 3
train.batch_size = 16
prune.sparsity = 0.8
";

fn feather(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_feather")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn train_writes_a_reconstructible_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run = dir.path().join("a");
    let out = feather(&["train", "--config", &cfg, "--out", run.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("run.seed = 3"));
    assert!(stdout.contains("prune.sparsity = 0.8"));

    for file in ["config.txt", "metrics.csv", "masks.bin", "final.fthr", "summary.csv"] {
        assert!(run.join(file).exists(), "{file}");
    }
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,train_loss,val_top1,requested_sparsity,achieved_sparsity,lr,theta,mask_pearson_vs_final\n"));
    assert_eq!(metrics.lines().count(), 4);

    // The resolved config alone reproduces the run.
    let again = dir.path().join("b");
    let resolved = run.join("config.txt");
    let out = feather(&["train", "--config", resolved.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(metrics, fs::read_to_string(again.join("metrics.csv")).unwrap());
    assert_eq!(fs::read(run.join("final.fthr")).unwrap(), fs::read(again.join("final.fthr")).unwrap());

    // Output directories are not reused.
    let out = feather(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn eval_analyze_and_flops_read_run_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run = dir.path().join("run");
    assert_eq!(code(&feather(&["train", "--config", &cfg, "--out", run.to_str().unwrap()])), 0);

    let ckpt = run.join("final.fthr");
    let out = feather(&["eval", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let eval = String::from_utf8(out.stdout).unwrap();
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let last_top1 = metrics.lines().last().unwrap().split(',').nth(2).unwrap();
    assert_eq!(eval, format!("metric,value\nval_top1,{last_top1}\n"));

    let curve_file = dir.path().join("curve.csv");
    let masks = run.join("masks.bin");
    let out = feather(&["analyze-masks", "--masks", masks.to_str().unwrap(), "--out", curve_file.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let curve = fs::read_to_string(curve_file).unwrap();
    assert!(curve.starts_with("epoch,r\n"));
    assert_eq!(curve.lines().last().unwrap(), "2,1");

    let out = feather(&["flops", "--config", &cfg]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "layer,dense_flops,sparse_flops\nfc0,256,256\nfc1,128,128\ntotal,384,384\n"
    );
    let out = feather(&["flops", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap()]);
    let text = String::from_utf8(out.stdout).unwrap();
    let total: Vec<u64> = text.lines().last().unwrap().split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert_eq!(total[0], 384);
    assert!(total[1] < 384);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("x");
    let out = out_dir.to_str().unwrap();
    let cfg = write_config(dir.path(), "prune.sparsity = 2\n");
    assert_eq!(code(&feather(&["train", "--config", &cfg, "--out", out])), 2);
    let cfg = write_config(dir.path(), "nonsense.key = 1\n");
    assert_eq!(code(&feather(&["train", "--config", &cfg, "--out", out])), 2);
    assert_eq!(code(&feather(&["train", "--config", "/does/not/exist", "--out", out])), 2);
    assert_eq!(code(&feather(&["train", "--set", "prune.operator=median", "--out", out])), 2);
    assert_eq!(code(&feather(&["train"])), 2);
    assert_eq!(code(&feather(&["frobnicate"])), 2);
}

#[test]
fn broken_data_is_a_run_failure() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images.idx");
    let labels = dir.path().join("labels.idx");
    let mut bytes = feather_core::data::encode_idx_images(4, 2, 2, &[0; 16]);
    bytes.truncate(bytes.len() - 3);
    fs::write(&images, bytes).unwrap();
    fs::write(&labels, feather_core::data::encode_idx_labels(&[0, 1, 0, 1])).unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "data.kind = idx\ndata.images = {}\ndata.labels = {}\ndata.classes = 2\nmodel.arch = mlp:4-2\n",
            images.display(),
            labels.display()
        ),
    );
    let out = feather(&["train", "--config", &cfg, "--out", dir.path().join("run").to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("format error"));
}

#[test]
fn idx_data_trains() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = (dir.path().join("img"), dir.path().join("lab"));
    let pixels: Vec<u8> = (0..40).flat_map(|i| if i % 2 == 0 { [255, 0, 0, 255] } else { [0, 255, 255, 0] }).collect();
    let classes: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
    fs::write(&images, feather_core::data::encode_idx_images(40, 2, 2, &pixels)).unwrap();
    fs::write(&labels, feather_core::data::encode_idx_labels(&classes)).unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "data.kind = idx\ndata.images = {}\ndata.labels = {}\ndata.classes = 2\nmodel.arch = cnn:1x2x2:conv2k2s1p0,fc2\ntrain.epochs = 4\ntrain.batch_size = 8\nprune.sparsity = 0.5\n",
            images.display(),
            labels.display()
        ),
    );
    let run = dir.path().join("run");
    let out = feather(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(run.join("summary.csv")).unwrap();
    assert!(summary.contains("\ndense_flops,24\n"), "{summary}");
    assert_eq!(fs::read_to_string(run.join("metrics.csv")).unwrap().lines().count(), 5);
}

#[test]
fn sweep_aggregates_over_seeds_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let sweep = |name: &str| {
        let out = dir.path().join(name);
        let o = feather(&[
            "sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--axis", "prune.sparsity=0.5,0.9", "--seeds", "0,1,2", "--jobs", "2",
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = sweep("a");
    let runs = fs::read_dir(&a).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(runs, 6);
    let aggregate = fs::read_to_string(a.join("aggregate.csv")).unwrap();
    let lines: Vec<&str> = aggregate.lines().collect();
    assert_eq!(lines[0], "prune.sparsity,runs,failures,top1_mean,top1_std,sparsity_mean,sparsity_std");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0.5,3,0,"));
    let b = sweep("b");
    assert_eq!(aggregate, fs::read_to_string(b.join("aggregate.csv")).unwrap());
    assert_eq!(fs::read(a.join("plot.csv")).unwrap(), fs::read(b.join("plot.csv")).unwrap());
}

#[test]
fn sweep_records_failures_and_emits_one_series_per_sparsity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}train.epochs = 2\n").replace("train.epochs = 3\n", ""));
    let out = dir.path().join("s");
    let o = feather(&[
        "sweep",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--axis",
        "prune.sparsity=0.5,0.9",
        "--axis",
        "train.lr=0.05,1e30",
    ]);
    assert_eq!(code(&o), 1);
    let aggregate = fs::read_to_string(out.join("aggregate.csv")).unwrap();
    let failures: Vec<&str> = aggregate.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(failures, ["0", "1", "0", "1"]);
    let plot = fs::read_to_string(out.join("plot.csv")).unwrap();
    let series: std::collections::BTreeSet<&str> = plot.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(series.into_iter().collect::<Vec<_>>(), ["prune.sparsity=0.5", "prune.sparsity=0.9"]);
}
