use std::io::Write;

use bru_core::oracle::{audit_models, bayes_filter, OracleAudit, OracleModel, MAX_ENUMERATION_LEN};
use bru_core::Rng;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult, ExitCode};

/// Exactness bound on the filter and on the binary-gate smoother.
pub const ORACLE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct OracleCheckArgs {
    pub trials: usize,
    pub tmax: usize,
    pub seed: u64,
    /// Negative control: perturbs the filter so the check must fail.
    pub corrupt_filter: bool,
}

#[derive(Debug, Clone, Default)]
pub struct OracleSummary {
    pub trials: usize,
    pub max_filter_error: f64,
    pub max_smoother_error: f64,
    pub max_smoother_gap: f64,
    pub mean_smoother_gap: f64,
    /// First model that broke a bound, as replayable JSON.
    pub failing_model: Option<String>,
}

/// First 12 hex digits of the SHA-256 of the model's JSON.
pub fn model_hash(model: &OracleModel) -> String {
    let json = serde_json::to_string(model).unwrap_or_default();
    hex::encode(Sha256::digest(json.as_bytes()))[..12].to_string()
}

fn corrupted_filter(model: &OracleModel) -> bru_core::Result<Vec<f64>> {
    Ok(bayes_filter(model)?.into_iter().map(|h| h * (1.0 - 1e-9)).collect())
}

pub fn run_trials(args: OracleCheckArgs, out: &mut dyn Write) -> CliResult<OracleSummary> {
    if args.tmax == 0 || args.tmax > MAX_ENUMERATION_LEN {
        return Err(CliError::usage(format!("--tmax must be in 1..={MAX_ENUMERATION_LEN}")));
    }
    let mut rng = Rng::new(args.seed);
    let mut summary = OracleSummary::default();
    let mut gap_sum = 0.0;
    writeln!(out, "{:<12}  {:>3}  {:>12}  {:>12}  {:>12}", "model", "T", "filter_err", "smoother_err", "smoother_gap")?;
    for _ in 0..args.trials {
        let fractional = OracleModel::random(&mut rng, args.tmax, false);
        let binary = fractional.binarized(&mut rng);
        let audit: OracleAudit = if args.corrupt_filter {
            audit_models(&fractional, &binary, corrupted_filter)?
        } else {
            audit_models(&fractional, &binary, bayes_filter)?
        };
        writeln!(
            out,
            "{:<12}  {:>3}  {:>12.3e}  {:>12.3e}  {:>12.3e}",
            model_hash(&fractional),
            fractional.len(),
            audit.filter_error,
            audit.smoother_error,
            audit.smoother_gap
        )?;
        summary.trials += 1;
        summary.max_filter_error = summary.max_filter_error.max(audit.filter_error);
        summary.max_smoother_error = summary.max_smoother_error.max(audit.smoother_error);
        summary.max_smoother_gap = summary.max_smoother_gap.max(audit.smoother_gap);
        gap_sum += audit.smoother_gap;
        if !(audit.filter_error < ORACLE_TOL && audit.smoother_error < ORACLE_TOL) {
            let pair = serde_json::json!({ "fractional": fractional, "binary": binary });
            summary.failing_model = Some(serde_json::to_string(&pair).unwrap_or_default());
            break;
        }
    }
    if summary.trials > 0 {
        summary.mean_smoother_gap = gap_sum / summary.trials as f64;
    }
    Ok(summary)
}

pub fn oracle_check(args: OracleCheckArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<ExitCode> {
    let s = run_trials(args, out)?;
    writeln!(
        out,
        "trials={}  max_filter_err={:.3e}  max_smoother_err={:.3e}  fractional_gap max={:.3e} mean={:.3e}",
        s.trials, s.max_filter_error, s.max_smoother_error, s.max_smoother_gap, s.mean_smoother_gap
    )?;
    match s.failing_model {
        Some(model) => {
            writeln!(err, "oracle exactness violated (tolerance {ORACLE_TOL:e}); replay with:")?;
            writeln!(err, "{model}")?;
            Ok(ExitCode::Failure)
        }
        None => Ok(ExitCode::Success),
    }
}
