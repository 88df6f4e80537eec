use bru_core::network::{CellKind, Mode, Network, NetworkConfig};
use bru_core::tasks::{DelayedCueSpec, LatentTaskSpec, TaskSpec};
use bru_core::trainer::{
    evaluate, train, train_on, write_metrics_csv, Adam, AdamConfig, Split, SplitSizes, Splits, TrainConfig, CSV_HEADER,
};
use bru_core::{Error, Rng};

fn latent(features: usize) -> TaskSpec {
    TaskSpec::LatentFeature(LatentTaskSpec {
        steps: 12,
        features,
        noise: 0.4,
        z: 0.9,
        p: 0.5,
    })
}

fn small(cell: CellKind, task: TaskSpec) -> TrainConfig {
    let net = NetworkConfig::new(cell, 1, 6, task.input_dim(), task.num_classes());
    let mut cfg = TrainConfig::new(net, task);
    cfg.sizes = SplitSizes {
        train: 32,
        val: 16,
        test: 16,
    };
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.seed = 4;
    cfg
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let mut cfg = small(CellKind::Bru, latent(1));
    cfg.optimizer.lr = 0.0;
    let splits = Splits::generate(&cfg.task, cfg.sizes, cfg.seed).unwrap();
    let out = train_on(&cfg, &splits).unwrap();
    let fresh = Network::init(cfg.network.clone(), &mut Rng::new(cfg.seed).derive(3)).unwrap();
    assert_eq!(out.best.params, fresh.params);
}

#[test]
fn adam_step_with_zero_gradient_is_identity() {
    let cfg = NetworkConfig::new(CellKind::Lbru, 1, 3, 2, 2);
    let net = Network::init(cfg, &mut Rng::new(1)).unwrap();
    let mut params = net.params.clone();
    let zeros = params.map(|_, t| bru_core::Tensor::zeros(t.shape().to_vec()).unwrap());
    let mut adam = Adam::new(AdamConfig::default(), &params).unwrap();
    for _ in 0..3 {
        adam.step(&mut params, &zeros, 0.1).unwrap();
    }
    assert_eq!(params, net.params);
}

#[test]
fn overfits_a_single_batch() {
    let task = TaskSpec::DelayedCue(DelayedCueSpec { steps: 6, gap: 2 });
    let data = task.generate(&mut Rng::new(8), 4).unwrap();
    let batch = data.batch(&[0, 1, 2, 3], 0).unwrap();
    let cfg = NetworkConfig::new(CellKind::Gru, 1, 8, 2, 2).bidirectional(true);
    let mut net = Network::init(cfg, &mut Rng::new(2)).unwrap();
    let mut adam = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, &net.params).unwrap();
    let mut rng = Rng::new(0);
    let mut last = f64::INFINITY;
    for _ in 0..200 {
        let out = net.loss_and_grads(&batch, Mode::Train, &mut rng).unwrap();
        last = out.loss;
        if last < 0.01 {
            break;
        }
        adam.step(&mut net.params, &out.grads, 0.05).unwrap();
    }
    assert!(last < 0.01, "loss {last}");
    let rec = evaluate(&net, &data, 4, Split::Train, 0, 0).unwrap();
    assert_eq!(rec.accuracy, 1.0);
}

#[test]
fn training_is_deterministic() {
    let cfg = small(CellKind::Lbru, latent(2));
    let a = train(&cfg).unwrap();
    let b = train(&cfg).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.best.params, b.best.params);
}

#[test]
fn untrained_accuracy_is_near_chance() {
    let task = TaskSpec::DelayedCue(DelayedCueSpec { steps: 20, gap: 3 });
    let data = task.generate(&mut Rng::new(3), 200).unwrap();
    let net = Network::init(NetworkConfig::new(CellKind::Gru, 1, 8, 2, 2), &mut Rng::new(5)).unwrap();
    let rec = evaluate(&net, &data, 50, Split::Test, 0, 0).unwrap();
    assert!((rec.accuracy - 0.5).abs() < 0.15, "accuracy {}", rec.accuracy);
}

#[test]
fn metrics_layout_and_schedule() {
    let mut cfg = small(CellKind::Gru, latent(1));
    // Every comparison halves; each record carries the rate its epoch ran at.
    cfg.lr_halving_threshold = f64::INFINITY;
    cfg.epochs = 4;
    let out = train(&cfg).unwrap();
    assert_eq!(out.metrics.len(), 2 * cfg.epochs + 1);
    let val_lr: Vec<f64> = out.metrics.iter().filter(|r| r.split == Split::Val).map(|r| r.lr).collect();
    let lr0 = cfg.optimizer.lr;
    assert_eq!(val_lr, vec![lr0, lr0, lr0 / 2.0, lr0 / 4.0]);
    assert!(out.metrics.iter().all(|r| r.seconds == 0.0 && r.seed == cfg.seed));
    let test = out.test().unwrap();
    assert_eq!(test.epoch, out.best_epoch);
    assert_eq!(out.checkpoint.epoch, out.best_epoch);

    let mut buf = Vec::new();
    write_metrics_csv(&out.metrics, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(lines.count(), out.metrics.len());
}

#[test]
fn never_halves_with_negative_threshold() {
    let mut cfg = small(CellKind::Mgu, latent(1));
    cfg.lr_halving_threshold = f64::NEG_INFINITY;
    let out = train(&cfg).unwrap();
    assert!(out.metrics.iter().filter(|r| r.split != Split::Test).all(|r| r.lr == cfg.optimizer.lr));
}

#[test]
fn divergence_is_reported() {
    let mut cfg = small(CellKind::Lstm, latent(1));
    cfg.optimizer.lr = 1e308;
    cfg.epochs = 5;
    match train(&cfg) {
        Err(Error::Diverged { norms, .. }) => assert!(norms.contains("readout.W_out")),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn mismatched_task_is_rejected() {
    let mut cfg = small(CellKind::Gru, latent(2));
    cfg.network.num_classes = 2;
    assert!(matches!(train(&cfg), Err(Error::Config(_))));
}

#[test]
fn affected_accuracy_is_reported_for_cue_task() {
    let cfg = small(CellKind::Ubru, TaskSpec::DelayedCue(DelayedCueSpec { steps: 10, gap: 2 }));
    let out = train(&cfg).unwrap();
    assert!(out.test().unwrap().affected_accuracy.is_some());
}

#[test]
fn config_json_defaults() {
    let json = r#"{"network":{"cell":"BRU","layers":1,"hidden":4,"input_dim":1,"num_classes":2},
        "task":{"latent_feature":{"steps":10,"features":1,"noise":0.3}}}"#;
    let cfg: TrainConfig = serde_json::from_str(json).unwrap();
    assert_eq!(cfg.epochs, 24);
    assert_eq!(cfg.sizes, SplitSizes::default());
    assert_eq!(cfg.optimizer.beta2, 0.999);
    assert!(serde_json::from_str::<TrainConfig>(&json.replace("}}}", "}},\"bogus\":1}")).is_err());
}
