//! Experiment specifications: one JSON document naming the network, the
//! task, the optimizer settings and the seeds to run.

use std::path::{Path, PathBuf};

use bru_core::network::{CellKind, NetworkConfig};
use bru_core::tasks::TaskSpec;
use bru_core::trainer::{AdamConfig, SplitSizes, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

fn d_epochs() -> usize {
    24
}
fn d_threshold() -> f64 {
    0.001
}
fn d_batch() -> usize {
    32
}
fn d_seeds() -> Vec<u64> {
    vec![0]
}

/// Unknown keys anywhere in the document are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
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
    pub record_time: bool,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    /// Overridden by `--out-dir`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Architectures swept by `compare`, as labels such as `Bi-GRU`; the
    /// full grid when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architectures: Option<Vec<String>>,
}

/// One `(cell, direction)` pair of a comparison sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub cell: CellKind,
    pub bidirectional: bool,
}

impl Architecture {
    pub const GRID: [Architecture; 6] = [
        Architecture::new(CellKind::Gru, false),
        Architecture::new(CellKind::Ubru, false),
        Architecture::new(CellKind::Lbru, false),
        Architecture::new(CellKind::Gru, true),
        Architecture::new(CellKind::Lstm, true),
        Architecture::new(CellKind::Lbru, true),
    ];

    pub const fn new(cell: CellKind, bidirectional: bool) -> Architecture {
        Architecture { cell, bidirectional }
    }

    /// Smoothing cells and bidirectional stacks see the future.
    pub fn has_backward_pass(self) -> bool {
        self.bidirectional || matches!(self.cell, CellKind::Ubru | CellKind::Lbru)
    }

    /// Accepts `Bi-GRU`, `Uni-GRU`, or a bare cell name; bare UBRU and
    /// LBRU are unidirectional.
    pub fn parse(label: &str) -> CliResult<Architecture> {
        let (bi, cell) = match label.split_once('-') {
            Some((dir, cell)) if dir.eq_ignore_ascii_case("bi") => (true, cell),
            Some((dir, cell)) if dir.eq_ignore_ascii_case("uni") => (false, cell),
            _ => (false, label),
        };
        let cell = cell.parse::<CellKind>().map_err(|e| CliError::usage(e.to_string()))?;
        Ok(Architecture::new(cell, bi))
    }

    pub fn label(self) -> String {
        match (self.bidirectional, self.cell) {
            (false, CellKind::Ubru | CellKind::Lbru) => self.cell.to_string(),
            (true, c) => format!("Bi-{c}"),
            (false, c) => format!("Uni-{c}"),
        }
    }

    pub fn apply(self, base: &NetworkConfig) -> NetworkConfig {
        NetworkConfig {
            cell: self.cell,
            bidirectional: self.bidirectional,
            ..base.clone()
        }
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> CliResult<ExperimentSpec> {
        let spec: ExperimentSpec =
            serde_json::from_str(text).map_err(|e| CliError::usage(format!("invalid experiment spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> CliResult<ExperimentSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        ExperimentSpec::from_json(&text).map_err(|e| e.context(path.display()))
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.seeds.is_empty() {
            return Err(CliError::usage("seeds must list at least one seed"));
        }
        self.train_config(self.seeds[0])?.validate()?;
        self.architectures()?;
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> CliResult<TrainConfig> {
        self.train_config_for(&self.network, seed)
    }

    pub fn train_config_for(&self, network: &NetworkConfig, seed: u64) -> CliResult<TrainConfig> {
        Ok(TrainConfig {
            network: network.clone(),
            task: self.task.clone(),
            sizes: self.sizes,
            optimizer: self.optimizer,
            epochs: self.epochs,
            lr_halving_threshold: self.lr_halving_threshold,
            batch_size: self.batch_size,
            seed,
            record_time: self.record_time,
        })
    }

    pub fn architectures(&self) -> CliResult<Vec<Architecture>> {
        match &self.architectures {
            None => Ok(Architecture::GRID.to_vec()),
            Some(list) if list.is_empty() => Err(CliError::usage("architectures must not be empty")),
            Some(list) => list.iter().map(|l| Architecture::parse(l)).collect(),
        }
    }

    /// `--out-dir` wins over the spec; one of them must be given.
    pub fn out_dir(&self, flag: Option<&Path>) -> CliResult<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.out_dir.clone())
            .ok_or_else(|| CliError::usage("no output directory: pass --out-dir or set out_dir in the spec"))
    }
}
