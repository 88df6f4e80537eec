use std::io::Write;
use std::path::{Path, PathBuf};

use bru_core::network::{param_count, Checkpoint};
use bru_core::tasks::{Ceiling, Dataset};
use bru_core::trainer::{evaluate, save_metrics_csv, train_on, MetricsRecord, Split, Splits};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{CliError, CliResult, ExitCode};
use crate::spec::{Architecture, ExperimentSpec};

pub const THREADS_ENV: &str = "BRU_THREADS";

fn describe(r: &MetricsRecord) -> String {
    let mut s = format!(
        "epoch={} split={} loss={:.6} accuracy={:.4} scored={}",
        r.epoch,
        r.split.name(),
        r.loss,
        r.accuracy,
        r.scored
    );
    if let Some(a) = r.affected_accuracy {
        s.push_str(&format!(" affected_accuracy={a:.4} affected={}", r.affected_scored));
    }
    s
}

fn write_splits(splits: &Splits, dir: &Path) -> CliResult<()> {
    for (name, data) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        data.write_jsonl(&dir.join(format!("{name}.jsonl")))?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub spec: PathBuf,
    pub out_dir: Option<PathBuf>,
    /// Replaces the spec's first seed.
    pub seed: Option<u64>,
    pub save_data: bool,
}

/// Trains one seed; writes `metrics.csv` and `checkpoint.json`.
pub fn train(args: &TrainArgs, out: &mut dyn Write) -> CliResult<ExitCode> {
    let spec = ExperimentSpec::load(&args.spec)?;
    let dir = spec.out_dir(args.out_dir.as_deref())?;
    let seed = args.seed.unwrap_or(spec.seeds[0]);
    let cfg = spec.train_config(seed)?;
    let splits = Splits::generate(&cfg.task, cfg.sizes, seed)?;
    std::fs::create_dir_all(&dir)?;
    if args.save_data {
        write_splits(&splits, &dir)?;
    }
    let outcome = train_on(&cfg, &splits).map_err(|e| CliError::from(e).context(format!("training seed {seed}")))?;
    save_metrics_csv(&outcome.metrics, &dir.join("metrics.csv"))?;
    outcome.checkpoint.save(&dir.join("checkpoint.json"))?;
    writeln!(out, "{} seed={seed} best_epoch={}", cfg.network.label(), outcome.best_epoch)?;
    if let Some(test) = outcome.test() {
        writeln!(out, "{}", describe(test))?;
    }
    if let Some(c) = splits.test.ceiling {
        writeln!(out, "ceiling smoothed={:.4} filtered={:.4}", c.smoothed, c.filtered)?;
    }
    Ok(ExitCode::Success)
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    /// A JSON-lines dataset; otherwise the split is regenerated from `spec`.
    pub data: Option<PathBuf>,
    pub spec: Option<PathBuf>,
    pub split: Split,
    pub batch_size: usize,
    pub out_dir: Option<PathBuf>,
}

pub fn eval(args: &EvalArgs, out: &mut dyn Write) -> CliResult<ExitCode> {
    if !args.checkpoint.is_file() {
        return Err(CliError::usage(format!("checkpoint {} not found", args.checkpoint.display())));
    }
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let net = ckpt.network()?;
    let data: Dataset = match (&args.data, &args.spec) {
        (Some(path), _) => Dataset::read_jsonl(path, Some(net.config.num_classes))?,
        (None, Some(spec_path)) => {
            let spec = ExperimentSpec::load(spec_path)?;
            let splits = Splits::generate(&spec.task, spec.sizes, ckpt.rng_seed)?;
            match args.split {
                Split::Train => splits.train,
                Split::Val => splits.val,
                Split::Test => splits.test,
            }
        }
        (None, None) => return Err(CliError::usage("eval needs --data or --spec")),
    };
    if data.scored() == 0 {
        return Err(CliError::usage("dataset has no scored positions"));
    }
    let record = evaluate(&net, &data, args.batch_size.max(1), args.split, ckpt.epoch, ckpt.rng_seed)?;
    writeln!(out, "{} {}", net.config.label(), describe(&record))?;
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir)?;
        save_metrics_csv(std::slice::from_ref(&record), &dir.join("metrics.csv"))?;
    }
    Ok(ExitCode::Success)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRow {
    pub architecture: String,
    pub seed: u64,
    pub param_count: usize,
    pub best_epoch: usize,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub scored: usize,
    /// Empty when the task flags no positions.
    pub affected_accuracy: Option<f64>,
    pub affected_scored: usize,
    pub ceiling_smoothed: Option<f64>,
    pub ceiling_filtered: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub architecture: String,
    pub param_count: usize,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub median_accuracy: f64,
    /// Half-width of the equal-tailed 95% Beta interval on pooled counts.
    pub interval_half_width: f64,
    pub seed_sd: f64,
    pub mean_affected_accuracy: Option<f64>,
    pub median_affected_accuracy: Option<f64>,
    pub affected_half_width: Option<f64>,
}

impl SummaryRow {
    /// Affected-position accuracy where the task defines it.
    pub fn primary_median(&self) -> f64 {
        self.median_affected_accuracy.unwrap_or(self.median_accuracy)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Half-width of the equal-tailed 95% interval of `Beta(hits + 1, n - hits + 1)`.
pub fn beta_half_width(hits: f64, n: f64) -> f64 {
    match Beta::new(hits + 1.0, n - hits + 1.0) {
        Ok(b) => 0.5 * (b.inverse_cdf(0.975) - b.inverse_cdf(0.025)),
        Err(_) => f64::NAN,
    }
}

fn summarize(arch: Architecture, rows: &[&RunRow]) -> SummaryRow {
    let acc: Vec<f64> = rows.iter().map(|r| r.test_accuracy).collect();
    let n = acc.len() as f64;
    let mean = acc.iter().sum::<f64>() / n;
    let sd = (acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let pooled = |pairs: &[(f64, usize)]| {
        let hits: f64 = pairs.iter().map(|(a, k)| (a * *k as f64).round()).sum();
        let total: usize = pairs.iter().map(|(_, k)| k).sum();
        beta_half_width(hits, total as f64)
    };
    let all: Vec<(f64, usize)> = rows.iter().map(|r| (r.test_accuracy, r.scored)).collect();
    let affected: Option<Vec<(f64, usize)>> =
        rows.iter().map(|r| r.affected_accuracy.map(|a| (a, r.affected_scored))).collect();
    let aff_values: Option<Vec<f64>> = affected.as_ref().map(|v| v.iter().map(|(a, _)| *a).collect());
    SummaryRow {
        architecture: arch.label(),
        param_count: rows[0].param_count,
        runs: rows.len(),
        mean_accuracy: mean,
        median_accuracy: median(&acc),
        interval_half_width: pooled(&all),
        seed_sd: sd,
        mean_affected_accuracy: aff_values.as_ref().map(|v| v.iter().sum::<f64>() / n),
        median_affected_accuracy: aff_values.as_ref().map(|v| median(v)),
        affected_half_width: affected.as_ref().map(|v| pooled(v)),
    }
}

#[derive(Debug, Clone)]
pub struct CompareArgs {
    pub spec: PathBuf,
    pub out_dir: Option<PathBuf>,
    /// Every architecture with a backward pass must beat every causal one.
    pub assert_ordering: bool,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub runs: Vec<RunRow>,
    pub summary: Vec<SummaryRow>,
    pub architectures: Vec<Architecture>,
}

impl Comparison {
    pub fn get(&self, label: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.architecture == label)
    }

    /// Backward-pass architectures strictly above each causal one, by
    /// median primary metric.
    pub fn ordering_holds(&self) -> bool {
        let (future, causal): (Vec<_>, Vec<_>) = self
            .architectures
            .iter()
            .zip(&self.summary)
            .partition(|(a, _)| a.has_backward_pass());
        future
            .iter()
            .all(|(_, f)| causal.iter().all(|(_, c)| f.primary_median() > c.primary_median()))
    }
}

fn thread_count() -> CliResult<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("{THREADS_ENV}={v} is not a thread count"))),
        Err(_) => Ok(0),
    }
}

struct Job {
    arch: Architecture,
    seed: u64,
    seed_index: usize,
}

/// Runs every architecture on every seed; data for a seed is shared across
/// architectures. Per-run metrics land in `runs/<label>-seed<seed>/`.
pub fn run_comparison(spec: &ExperimentSpec, dir: &Path) -> CliResult<Comparison> {
    let archs = spec.architectures()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| CliError::usage(e.to_string()))?;
    let splits: Vec<Splits> = pool.install(|| {
        spec.seeds
            .par_iter()
            .map(|&s| Splits::generate(&spec.task, spec.sizes, s))
            .collect::<bru_core::Result<_>>()
    })?;
    let jobs: Vec<Job> = archs
        .iter()
        .flat_map(|&arch| {
            spec.seeds
                .iter()
                .enumerate()
                .map(move |(seed_index, &seed)| Job { arch, seed, seed_index })
        })
        .collect();
    let results: Vec<CliResult<(RunRow, Vec<MetricsRecord>, Checkpoint)>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let net_cfg = job.arch.apply(&spec.network);
                let cfg = spec.train_config_for(&net_cfg, job.seed)?;
                let data = &splits[job.seed_index];
                let outcome = train_on(&cfg, data)
                    .map_err(|e| CliError::from(e).context(format!("{} seed {}", job.arch.label(), job.seed)))?;
                let test = outcome.test().cloned().ok_or_else(|| CliError::failure("no test record"))?;
                let ceiling: Option<Ceiling> = data.test.ceiling;
                let row = RunRow {
                    architecture: job.arch.label(),
                    seed: job.seed,
                    param_count: param_count(&net_cfg)?.total,
                    best_epoch: outcome.best_epoch,
                    test_loss: test.loss,
                    test_accuracy: test.accuracy,
                    scored: test.scored,
                    affected_accuracy: test.affected_accuracy,
                    affected_scored: test.affected_scored,
                    ceiling_smoothed: ceiling.map(|c| c.smoothed),
                    ceiling_filtered: ceiling.map(|c| c.filtered),
                };
                Ok((row, outcome.metrics, outcome.checkpoint))
            })
            .collect()
    });

    let mut runs = Vec::with_capacity(results.len());
    for result in results {
        let (row, metrics, ckpt) = result?;
        let run_dir = dir.join("runs").join(format!("{}-seed{}", row.architecture, row.seed));
        std::fs::create_dir_all(&run_dir)?;
        save_metrics_csv(&metrics, &run_dir.join("metrics.csv"))?;
        ckpt.save(&run_dir.join("checkpoint.json"))?;
        runs.push(row);
    }
    let summary = archs
        .iter()
        .map(|a| {
            let rows: Vec<&RunRow> = runs.iter().filter(|r| r.architecture == a.label()).collect();
            summarize(*a, &rows)
        })
        .collect();
    Ok(Comparison {
        runs,
        summary,
        architectures: archs,
    })
}

fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn compare(args: &CompareArgs, out: &mut dyn Write) -> CliResult<ExitCode> {
    let spec = ExperimentSpec::load(&args.spec)?;
    let dir = spec.out_dir(args.out_dir.as_deref())?;
    std::fs::create_dir_all(&dir)?;
    let cmp = run_comparison(&spec, &dir)?;
    write_csv(&cmp.runs, &dir.join("runs.csv"))?;
    write_csv(&cmp.summary, &dir.join("summary.csv"))?;

    let metric = if cmp.summary.iter().all(|s| s.median_affected_accuracy.is_some()) {
        "affected-position accuracy"
    } else {
        "accuracy"
    };
    writeln!(out, "{:<10} {:>8} {:>5} {:>9} {:>9} {:>8}", "arch", "params", "runs", "mean", "median", "±95%")?;
    let mut ranked: Vec<&SummaryRow> = cmp.summary.iter().collect();
    ranked.sort_by(|a, b| b.primary_median().total_cmp(&a.primary_median()));
    for s in ranked {
        let (mean, half) = match metric {
            "affected-position accuracy" => (s.mean_affected_accuracy.unwrap_or(f64::NAN), s.affected_half_width.unwrap_or(f64::NAN)),
            _ => (s.mean_accuracy, s.interval_half_width),
        };
        writeln!(
            out,
            "{:<10} {:>8} {:>5} {:>9.4} {:>9.4} {:>8.4}",
            s.architecture,
            s.param_count,
            s.runs,
            mean,
            s.primary_median(),
            half
        )?;
    }
    writeln!(out, "ranked by median {metric}")?;
    if args.assert_ordering && !cmp.ordering_holds() {
        writeln!(out, "ordering violated: a backward-pass architecture does not beat every causal one")?;
        return Ok(ExitCode::Failure);
    }
    Ok(ExitCode::Success)
}
