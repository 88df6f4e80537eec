use std::io::Write;
use std::path::PathBuf;

use bru_core::autodiff::{GradReport, DEFAULT_EPS};
use bru_core::network::{CellKind, Mode, Network, NetworkConfig};
use bru_core::tasks::random_batch;
use bru_core::Rng;

use crate::error::{CliResult, ExitCode};

pub const DEFAULT_TOL: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckArgs {
    pub cell: CellKind,
    pub seed: u64,
    pub tol: f64,
    pub eps: f64,
    pub layers: usize,
    pub bidirectional: bool,
    pub input_dim: usize,
    pub hidden: usize,
    pub steps: usize,
    pub batch: usize,
    pub classes: usize,
    pub dropout: f64,
    pub out_dir: Option<PathBuf>,
}

impl GradCheckArgs {
    pub fn new(cell: CellKind, seed: u64) -> GradCheckArgs {
        GradCheckArgs {
            cell,
            seed,
            tol: DEFAULT_TOL,
            eps: DEFAULT_EPS,
            layers: 1,
            bidirectional: false,
            input_dim: 3,
            hidden: 4,
            steps: 5,
            batch: 2,
            classes: 3,
            dropout: 0.0,
            out_dir: None,
        }
    }

    pub fn config(&self) -> NetworkConfig {
        NetworkConfig::new(self.cell, self.layers, self.hidden, self.input_dim, self.classes)
            .bidirectional(self.bidirectional)
            .dropout(self.dropout)
    }
}

/// Network from `seed`, a ragged batch from `seed + 1`, train-mode dropout
/// from `seed + 2`.
pub fn run(args: &GradCheckArgs) -> CliResult<GradReport> {
    let cfg = args.config();
    let net = Network::init(cfg, &mut Rng::new(args.seed))?;
    let batch = random_batch(
        &mut Rng::new(args.seed + 1),
        args.steps,
        args.batch,
        args.input_dim,
        args.classes,
        true,
    )?;
    Ok(net.grad_check(&batch, Mode::Train, args.seed + 2, args.eps)?)
}

pub fn grad_check(args: &GradCheckArgs, out: &mut dyn Write) -> CliResult<ExitCode> {
    let report = run(args)?;
    let text = format!("{}\n{report}\n", args.config().label());
    out.write_all(text.as_bytes())?;
    if let Some(dir) = &args.out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("gradreport.txt"), &text)?;
    }
    let worst = report.max_rel_error();
    if worst <= args.tol {
        writeln!(out, "PASS max_rel={worst:.3e} <= tol={:e}", args.tol)?;
        Ok(ExitCode::Success)
    } else {
        writeln!(out, "FAIL max_rel={worst:.3e} > tol={:e}", args.tol)?;
        Ok(ExitCode::Failure)
    }
}
