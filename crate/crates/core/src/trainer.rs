//! Adam with truncation-free BPTT, a validation-driven learning-rate halving
//! schedule, and per-epoch metrics.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{predictions, Checkpoint, Mode, NetParams, Network, NetworkConfig};
use crate::tasks::{Dataset, SequenceBatch, TaskSpec};
use crate::tensor::{Rng, Tensor};

pub const CSV_HEADER: &str = "epoch,split,loss,accuracy,lr,seconds,seed";

fn d_lr() -> f64 {
    1e-2
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}
fn d_epochs() -> usize {
    24
}
fn d_threshold() -> f64 {
    0.001
}
fn d_batch() -> usize {
    32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: d_lr(),
            beta1: d_beta1(),
            beta2: d_beta2(),
            eps: d_eps(),
        }
    }
}

/// First and second moment estimates shaped like the parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: NetParams,
    v: NetParams,
    steps: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &NetParams) -> Result<Adam> {
        let zeros = params.try_map(|_, t| Tensor::zeros(t.shape().to_vec()))?;
        Ok(Adam {
            config,
            m: zeros.clone(),
            v: zeros,
            steps: 0,
        })
    }

    /// One bias-corrected update at learning rate `lr`.
    pub fn step(&mut self, params: &mut NetParams, grads: &NetParams, lr: f64) -> Result<()> {
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        self.steps += 1;
        let c1 = 1.0 - beta1.powi(self.steps);
        let c2 = 1.0 - beta2.powi(self.steps);
        self.m.zip_apply(grads, |_, m, g| {
            for (mi, gi) in m.data_mut().iter_mut().zip(g.data()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
            }
        })?;
        self.v.zip_apply(grads, |_, v, g| {
            for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            }
        })?;
        let m = &self.m;
        let v = &self.v;
        let mut step = m.clone();
        step.zip_apply(v, |_, s, v| {
            for (si, vi) in s.data_mut().iter_mut().zip(v.data()) {
                *si = lr * (*si / c1) / ((vi / c2).sqrt() + eps);
            }
        })?;
        params.zip_apply(&step, |_, p, s| {
            for (pi, si) in p.data_mut().iter_mut().zip(s.data()) {
                *pi -= si;
            }
        })
    }
}

fn d_train() -> usize {
    2000
}
fn d_eval() -> usize {
    500
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    #[serde(default = "d_train")]
    pub train: usize,
    #[serde(default = "d_eval")]
    pub val: usize,
    #[serde(default = "d_eval")]
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: d_train(),
            val: d_eval(),
            test: d_eval(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// RNG stream ids derived from a run seed.
mod stream {
    pub const TRAIN: u64 = 0;
    pub const VAL: u64 = 1;
    pub const TEST: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const DROPOUT: u64 = 5;
}

impl Splits {
    /// Each split draws from its own stream of `seed`.
    pub fn generate(task: &TaskSpec, sizes: SplitSizes, seed: u64) -> Result<Splits> {
        let base = Rng::new(seed);
        Ok(Splits {
            train: task.generate(&mut base.derive(stream::TRAIN), sizes.train)?,
            val: task.generate(&mut base.derive(stream::VAL), sizes.val)?,
            test: task.generate(&mut base.derive(stream::TEST), sizes.test)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub task: TaskSpec,
    #[serde(default)]
    pub sizes: SplitSizes,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_threshold")]
    pub lr_halving_threshold: f64,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Wall-clock timing in the `seconds` column; otherwise it reads 0.
    #[serde(default)]
    pub record_time: bool,
}

impl TrainConfig {
    pub fn new(network: NetworkConfig, task: TaskSpec) -> TrainConfig {
        TrainConfig {
            network,
            task,
            sizes: SplitSizes::default(),
            optimizer: AdamConfig::default(),
            epochs: d_epochs(),
            lr_halving_threshold: d_threshold(),
            batch_size: d_batch(),
            seed: 0,
            record_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if self.network.input_dim != self.task.input_dim() || self.network.num_classes != self.task.num_classes() {
            return Err(Error::Config(format!(
                "network expects {} inputs and {} classes, task provides {} and {}",
                self.network.input_dim,
                self.network.num_classes,
                self.task.input_dim(),
                self.task.num_classes()
            )));
        }
        let o = &self.optimizer;
        if !(o.lr >= 0.0 && o.lr.is_finite()) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.eps <= 0.0 {
            return Err(Error::Config(format!("invalid optimizer settings {o:?}")));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    /// Accuracy restricted to positions flagged as future-dependent.
    pub affected_accuracy: Option<f64>,
    pub scored: usize,
    pub affected_scored: usize,
    pub lr: f64,
    pub seconds: f64,
    pub seed: u64,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    epoch: usize,
    split: &'a str,
    loss: f64,
    accuracy: f64,
    lr: f64,
    seconds: f64,
    seed: u64,
}

/// Writes the header and one row per record.
pub fn write_metrics_csv(records: &[MetricsRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Data(e.to_string());
    for r in records {
        w.serialize(CsvRow {
            epoch: r.epoch,
            split: r.split.name(),
            loss: r.loss,
            accuracy: r.accuracy,
            lr: r.lr,
            seconds: r.seconds,
            seed: r.seed,
        })
        .map_err(err)?;
    }
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(',')).map_err(err)?;
    }
    w.flush().map_err(|e| Error::Data(e.to_string()))
}

pub fn save_metrics_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    write_metrics_csv(records, std::io::BufWriter::new(file))
}

#[derive(Debug, Default, Clone, Copy)]
struct Tally {
    loss_sum: f64,
    scored: usize,
    hits: usize,
    affected: usize,
    affected_hits: usize,
    any_affected: bool,
}

impl Tally {
    fn add(&mut self, batch: &SequenceBatch, logits: &Tensor, loss: f64) -> Result<()> {
        let preds = predictions(logits)?;
        let mut scored = 0;
        for (k, (t, &m)) in batch.targets.iter().zip(&batch.mask).enumerate() {
            let (Some(t), true) = (t, m) else { continue };
            scored += 1;
            let hit = preds[k] == *t;
            self.hits += hit as usize;
            if let Some(a) = &batch.affected {
                self.any_affected = true;
                if a[k] {
                    self.affected += 1;
                    self.affected_hits += hit as usize;
                }
            }
        }
        self.scored += scored;
        self.loss_sum += loss * scored as f64;
        Ok(())
    }

    fn record(&self, epoch: usize, split: Split, lr: f64, seconds: f64, seed: u64) -> Result<MetricsRecord> {
        if self.scored == 0 {
            return Err(Error::Data("no scored positions".into()));
        }
        Ok(MetricsRecord {
            epoch,
            split,
            loss: self.loss_sum / self.scored as f64,
            accuracy: self.hits as f64 / self.scored as f64,
            affected_accuracy: (self.any_affected && self.affected > 0)
                .then(|| self.affected_hits as f64 / self.affected as f64),
            scored: self.scored,
            affected_scored: self.affected,
            lr,
            seconds,
            seed,
        })
    }
}

/// Eval-mode metrics over the whole dataset.
pub fn evaluate(net: &Network, data: &Dataset, batch_size: usize, split: Split, epoch: usize, seed: u64) -> Result<MetricsRecord> {
    if data.scored() == 0 {
        return Err(Error::Data("dataset has no scored positions".into()));
    }
    let mut tally = Tally::default();
    let mut rng = Rng::new(seed);
    for batch in data.batches(batch_size)? {
        if !batch.mask.iter().any(|&m| m) {
            continue;
        }
        let logits = net.forward(&batch, Mode::Eval, &mut rng)?;
        let loss = crate::network::loss(&logits, &batch.targets, &batch.mask)?;
        tally.add(&batch, &logits, loss)?;
    }
    tally.record(epoch, split, 0.0, 0.0, seed)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest validation loss.
    pub best: Network,
    pub best_epoch: usize,
    pub checkpoint: Checkpoint,
    /// Train and val records per epoch, then one test record for `best`.
    pub metrics: Vec<MetricsRecord>,
}

impl TrainOutcome {
    pub fn test(&self) -> Option<&MetricsRecord> {
        self.metrics.iter().find(|r| r.split == Split::Test)
    }
}

pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let splits = Splits::generate(&config.task, config.sizes, config.seed)?;
    train_on(config, &splits)
}

fn diverged(e: Error, epoch: usize, batch: usize, net: &Network) -> Error {
    match e {
        Error::Numeric(_) => Error::Diverged {
            epoch,
            batch,
            norms: net.params.norm_summary(),
        },
        other => other,
    }
}

/// Trains on pre-generated data; everything else follows `config`.
pub fn train_on(config: &TrainConfig, splits: &Splits) -> Result<TrainOutcome> {
    config.validate()?;
    let seed = config.seed;
    let base = Rng::new(seed);
    let mut net = Network::init(config.network.clone(), &mut base.derive(stream::INIT))?;
    let mut adam = Adam::new(config.optimizer, &net.params)?;
    let mut shuffle = base.derive(stream::SHUFFLE);
    let mut dropout = base.derive(stream::DROPOUT);
    let clock = Instant::now();
    let elapsed = || if config.record_time { clock.elapsed().as_secs_f64() } else { 0.0 };

    let mut lr = config.optimizer.lr;
    let mut metrics = Vec::with_capacity(2 * config.epochs + 1);
    let mut best: Option<(f64, usize, Network)> = None;
    let mut prev_val: Option<f64> = None;
    let mut order: Vec<usize> = (0..splits.train.len()).collect();

    for epoch in 1..=config.epochs {
        shuffle.shuffle(&mut order);
        let mut tally = Tally::default();
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = splits.train.batch(chunk, seed)?;
            let out = net
                .loss_and_grads(&batch, Mode::Train, &mut dropout)
                .map_err(|e| diverged(e, epoch, b, &net))?;
            if !out.loss.is_finite() {
                return Err(diverged(Error::Numeric("loss".into()), epoch, b, &net));
            }
            tally.add(&batch, &out.logits, out.loss)?;
            adam.step(&mut net.params, &out.grads, lr)?;
            let mut finite = true;
            net.params.for_each(|_, t| finite &= t.data().iter().all(|v| v.is_finite()));
            if !finite {
                return Err(diverged(Error::Numeric("parameters".into()), epoch, b, &net));
            }
        }
        metrics.push(tally.record(epoch, Split::Train, lr, elapsed(), seed)?);

        let mut val = evaluate(&net, &splits.val, config.batch_size, Split::Val, epoch, seed)
            .map_err(|e| diverged(e, epoch, 0, &net))?;
        val.lr = lr;
        val.seconds = elapsed();
        let val_loss = val.loss;
        metrics.push(val);

        if best.as_ref().is_none_or(|(l, _, _)| val_loss < *l) {
            best = Some((val_loss, epoch, net.clone()));
        }
        if let Some(prev) = prev_val {
            if (prev - val_loss) / prev.max(f64::EPSILON) < config.lr_halving_threshold {
                lr /= 2.0;
            }
        }
        prev_val = Some(val_loss);
    }

    let (best_net, best_epoch) = match best {
        Some((_, e, n)) => (n, e),
        None => (net, 0),
    };
    let mut test = evaluate(&best_net, &splits.test, config.batch_size, Split::Test, best_epoch, seed)?;
    test.lr = lr;
    test.seconds = elapsed();
    metrics.push(test);
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(&best_net, seed, best_epoch),
        best: best_net,
        best_epoch,
        metrics,
    })
}
