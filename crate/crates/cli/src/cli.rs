use std::io::Write;
use std::path::PathBuf;

use bru_core::autodiff::DEFAULT_EPS;
use bru_core::network::CellKind;
use bru_core::trainer::Split;
use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::{audit, gradcheck, oracle, run};
use crate::error::{CliError, CliResult, ExitCode};

#[derive(Debug, Parser)]
#[command(name = "bru", version, about = "Bayesian recurrent unit toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the recursive filter and smoother against brute-force enumeration.
    OracleCheck {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 8)]
        tmax: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        corrupt_filter: bool,
    },
    /// Compare taped gradients with central differences.
    GradCheck {
        #[arg(long, value_parser = parse_cell)]
        cell: CellKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = gradcheck::DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_EPS)]
        eps: f64,
        #[arg(long, default_value_t = 1)]
        layers: usize,
        #[arg(long)]
        bidirectional: bool,
        #[arg(long, default_value_t = 3)]
        input_dim: usize,
        #[arg(long, default_value_t = 4)]
        hidden: usize,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Print trainable parameter counts for a network config.
    ParamAudit {
        #[arg(long)]
        config: PathBuf,
        /// Fail unless UBRU matches GRU and LBRU undercuts Bi-GRU.
        #[arg(long)]
        assert_parity: bool,
    },
    /// Train one seed of an experiment spec.
    Train {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the generated splits as JSON lines.
        #[arg(long)]
        save_data: bool,
    },
    /// Evaluate a checkpoint on a dataset file or a regenerated split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "spec")]
        data: Option<PathBuf>,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train an architecture grid over the spec's seeds and summarise.
    Compare {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        assert_ordering: bool,
    },
}

fn parse_cell(s: &str) -> Result<CellKind, String> {
    s.parse().map_err(|e: bru_core::Error| e.to_string())
}

pub fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<ExitCode> {
    match cli.command {
        Command::OracleCheck {
            trials,
            tmax,
            seed,
            corrupt_filter,
        } => oracle::oracle_check(
            oracle::OracleCheckArgs {
                trials,
                tmax,
                seed,
                corrupt_filter,
            },
            out,
            err,
        ),
        Command::GradCheck {
            cell,
            seed,
            tol,
            eps,
            layers,
            bidirectional,
            input_dim,
            hidden,
            steps,
            batch,
            classes,
            dropout,
            out_dir,
        } => gradcheck::grad_check(
            &gradcheck::GradCheckArgs {
                cell,
                seed,
                tol,
                eps,
                layers,
                bidirectional,
                input_dim,
                hidden,
                steps,
                batch,
                classes,
                dropout,
                out_dir,
            },
            out,
        ),
        Command::ParamAudit { config, assert_parity } => audit::param_audit(&config, assert_parity, out),
        Command::Train {
            spec,
            out_dir,
            seed,
            save_data,
        } => run::train(
            &run::TrainArgs {
                spec,
                out_dir,
                seed,
                save_data,
            },
            out,
        ),
        Command::Eval {
            checkpoint,
            data,
            spec,
            split,
            batch_size,
            out_dir,
        } => run::eval(
            &run::EvalArgs {
                checkpoint,
                data,
                spec,
                split: split.into(),
                batch_size,
                out_dir,
            },
            out,
        ),
        Command::Compare {
            spec,
            out_dir,
            assert_ordering,
        } => run::compare(
            &run::CompareArgs {
                spec,
                out_dir,
                assert_ordering,
            },
            out,
        ),
    }
}

/// Parses `argv` (program name first) and runs it; parse failures are
/// usage errors.
pub fn run_argv<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<ExitCode>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::usage(e.to_string()))?;
    dispatch(cli, out, err)
}
