use feather_core::data::{synth_blobs, BlobSpec, Dataset};
use feather_core::trainer::{cosine_lr, evaluate, sgd_step};
use feather_core::{
    train, train_dense, Architecture, Backbone, BackboneKind, Error, Exec, GradScalePolicy, Model,
    SparsitySchedule, ThresholdOperator, TrainConfig,
};

fn blobs(dims: usize, samples: usize, seed: u64) -> (Dataset, Dataset) {
    synth_blobs(&BlobSpec {
        classes: 4,
        dims,
        samples,
        noise: 0.3,
        seed,
    })
    .unwrap()
    .split(0.75)
    .unwrap()
}

fn small_run(config: &TrainConfig) -> (feather_core::TrainOutcome, Model) {
    let (tr, va) = blobs(12, 240, 1);
    let mut model = Model::init("mlp:12-16-4".parse().unwrap(), config.operator, config.seed).unwrap();
    let out = train(config, &mut model, &tr, &va).unwrap();
    (out, model)
}

fn config(final_sparsity: f64, epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        ..TrainConfig::desk(final_sparsity, epochs).unwrap()
    }
}

#[test]
fn cosine_lr_examples() {
    assert_eq!(cosine_lr(10, 100, 0.1, 10), 0.1);
    assert_eq!(cosine_lr(0, 100, 0.1, 10), 0.0);
    assert!((cosine_lr(5, 100, 0.1, 10) - 0.05).abs() < 1e-7);
    assert!((cosine_lr(50, 100, 0.1, 0) - 0.05).abs() < 1e-7);
    let end = cosine_lr(99, 100, 0.1, 0);
    let bound = 0.5 * 0.1 * (1.0 - (std::f64::consts::PI / 100.0).cos());
    assert!(end >= 0.0 && f64::from(end) <= bound + 1e-9);
    let lrs: Vec<f32> = (10..100).map(|t| cosine_lr(t, 100, 0.1, 10)).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn sgd_step_examples() {
    let (mut w, mut buf) = ([1.0f32], [0.2f32]);
    sgd_step(&mut w, &[0.1], &mut buf, 0.1, 0.9, 0.0).unwrap();
    assert!((buf[0] - 0.28).abs() < 1e-7);
    assert!((w[0] - 0.972).abs() < 1e-7);

    let (mut w, mut buf) = ([0.5f32, -2.0], [0.0f32; 2]);
    sgd_step(&mut w, &[0.3, -0.1], &mut buf, 0.1, 0.0, 0.0).unwrap();
    assert_eq!(w, [0.5 - 0.1 * 0.3, -2.0 + 0.1 * 0.1]);

    let (mut w, mut buf) = ([0.5f32], [0.0f32]);
    sgd_step(&mut w, &[0.0], &mut buf, 0.1, 0.9, 0.0).unwrap();
    assert_eq!(w, [0.5]);

    let (mut w, mut buf) = ([2.0f32], [0.0f32]);
    sgd_step(&mut w, &[0.0], &mut buf, 0.5, 0.0, 0.1).unwrap();
    assert_eq!(w, [2.0 - 0.5 * 0.2]);

    assert!(sgd_step(&mut [0.0; 2], &[0.0], &mut [0.0; 2], 0.1, 0.9, 0.0).is_err());
}

#[test]
fn config_validation() {
    let ok = config(0.5, 4);
    ok.validate().unwrap();
    let bad = [
        TrainConfig { epochs: 0, ..ok.clone() },
        TrainConfig { batch_size: 0, ..ok.clone() },
        TrainConfig { lr: -0.1, ..ok.clone() },
        TrainConfig { momentum: 1.0, ..ok.clone() },
        TrainConfig { weight_decay: f32::NAN, ..ok.clone() },
        TrainConfig { label_smoothing: 1.0, ..ok.clone() },
        TrainConfig { warmup_epochs: 4, ..ok.clone() },
        TrainConfig { schedule: SparsitySchedule::new(0.5, 5, 0.5).unwrap(), ..ok.clone() },
        TrainConfig { grad_policy: GradScalePolicy::Fixed(1.5), ..ok.clone() },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(Error::Contract(_))), "{c:?}");
    }
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let c = config(0.8, 4);
    let (a, ma) = small_run(&c);
    let (b, mb) = small_run(&c);
    assert_eq!(a.metrics.to_csv(), b.metrics.to_csv());
    assert_eq!(a.snapshots, b.snapshots);
    assert_eq!(ma.to_checkpoint().to_bytes().unwrap(), mb.to_checkpoint().to_bytes().unwrap());
    let other = small_run(&TrainConfig { seed: 9, ..c }).0;
    assert_ne!(a.metrics.to_csv(), other.metrics.to_csv());
}

#[test]
fn sequential_and_parallel_agree() {
    let seq = small_run(&TrainConfig { exec: Exec::Sequential, ..config(0.8, 3) }).0;
    let par = small_run(&TrainConfig { exec: Exec::Parallel, ..config(0.8, 3) }).0;
    assert_eq!(seq.metrics.to_csv(), par.metrics.to_csv());
}

#[test]
fn zero_sparsity_matches_dense_training() {
    let c = TrainConfig {
        grad_policy: GradScalePolicy::Fixed(1.0),
        ..config(0.0, 4)
    };
    let (tr, va) = blobs(12, 240, 1);
    let arch: Architecture = "mlp:12-16-4".parse().unwrap();
    let mut sparse = Model::init(arch.clone(), c.operator, 0).unwrap();
    let mut dense = Model::init(arch, c.operator, 0).unwrap();
    let a = train(&c, &mut sparse, &tr, &va).unwrap();
    let b = train_dense(&c, &mut dense, &tr, &va).unwrap();
    assert_eq!(a.metrics.to_csv(), b.metrics.to_csv());
    for (x, y) in sparse.layers.iter().zip(&dense.layers) {
        assert_eq!(x.weights.data(), y.weights.data());
    }
}

#[test]
fn metrics_follow_the_schedule() {
    let c = config(0.9, 6);
    let (out, model) = small_run(&c);
    let records = &out.metrics.records;
    let n = model.prunable_params();
    assert_eq!(records.len(), 6);
    for (e, r) in records.iter().enumerate() {
        assert_eq!(r.epoch, e);
        assert_eq!(r.requested_sparsity, c.schedule.sparsity_at(e).unwrap());
        let floor = feather_core::thresholding::prune_count(r.requested_sparsity, n) as f64 / n as f64;
        assert!(r.achieved_sparsity >= floor);
        assert!(r.achieved_sparsity <= floor + 0.01);
        assert!((0.0..=100.0).contains(&r.val_top1));
        assert!(r.train_loss.is_finite());
        assert_eq!(r.theta, 1.0);
    }
    assert_eq!(records.last().unwrap().mask_pearson_vs_final, 1.0);
    assert_eq!(out.snapshots.last().unwrap().layers, model.masks());
    assert!(out.metrics.to_csv().starts_with("epoch,train_loss,val_top1,"));
    assert_eq!(out.metrics.to_csv().lines().count(), 7);
}

#[test]
fn auto_step_lowers_theta_at_high_sparsity() {
    let (out, _) = small_run(&config(0.96, 2));
    assert!(out.metrics.records.iter().all(|r| r.theta == 0.5));
}

#[test]
fn uniform_backbone_prunes_every_layer_equally() {
    let c = TrainConfig {
        backbone: Backbone::new(BackboneKind::UniformLayerwise),
        ..config(0.75, 4)
    };
    let (_, mut model) = small_run(&c);
    // Re-running the assignment on the trained weights hits the target in
    // every layer separately.
    c.backbone.assign(&mut model.layers, 0.75).unwrap();
    for layer in &model.layers {
        let t = layer.threshold().unwrap();
        let n = layer.weights.numel();
        let pruned = layer.weights.data().iter().filter(|w| w.abs() <= t.get()).count();
        assert_eq!(pruned, feather_core::thresholding::prune_count(0.75, n));
    }
}

#[test]
fn divergence_is_reported() {
    let c = TrainConfig {
        lr: 1e30,
        label_smoothing: 0.0,
        ..config(0.5, 2)
    };
    let (tr, va) = blobs(12, 240, 1);
    let mut model = Model::init("mlp:12-16-4".parse().unwrap(), c.operator, 0).unwrap();
    match train(&c, &mut model, &tr, &va) {
        Err(Error::Diverged { epoch, layer_norms, .. }) => {
            assert_eq!(epoch, 0);
            assert_eq!(layer_norms.len(), 2);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn dataset_must_fit_the_model() {
    let (tr, va) = blobs(12, 240, 1);
    let mut wrong_width = Model::init("mlp:10-4".parse().unwrap(), ThresholdOperator::Soft, 0).unwrap();
    assert!(train(&config(0.5, 2), &mut wrong_width, &tr, &va).is_err());
    let mut wrong_classes = Model::init("mlp:12-3".parse().unwrap(), ThresholdOperator::Soft, 0).unwrap();
    assert!(evaluate(&wrong_classes, &va).is_err());
    assert!(train(&config(0.5, 2), &mut wrong_classes, &tr, &va).is_err());
}

#[test]
fn small_cnn_trains() {
    let data = synth_blobs(&BlobSpec {
        classes: 3,
        dims: 36,
        samples: 120,
        noise: 0.2,
        seed: 4,
    })
    .unwrap();
    let images = feather_core::Tensor::new(vec![120, 1, 6, 6], data.features().data().to_vec()).unwrap();
    let data = Dataset::new(images, data.labels().to_vec(), 3).unwrap();
    let (tr, va) = data.split(0.75).unwrap();
    let arch: Architecture = "cnn:1x6x6:conv4k3s1p1,conv4k3s2p1,fc3".parse().unwrap();
    let c = TrainConfig {
        backbone: Backbone::new(BackboneKind::UniformLayerwise),
        ..config(0.5, 3)
    };
    let mut model = Model::init(arch, c.operator, 0).unwrap();
    let out = train(&c, &mut model, &tr, &va).unwrap();
    // The first convolution is exempt under the uniform backbone.
    assert!(out.snapshots.iter().all(|s| s.layers[0].iter().all(|&m| m)));
    assert_eq!(model.layers[0].threshold().unwrap().get(), 0.0);
}
