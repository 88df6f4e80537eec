use std::io::Write;
use std::path::Path;

use bru_core::network::{param_count, CellKind, NetworkConfig};

use crate::error::{CliError, CliResult, ExitCode};
use crate::spec::ExperimentSpec;

/// Accepts a bare network config or a full experiment spec.
pub fn load_network_config(path: &Path) -> CliResult<NetworkConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: malformed JSON: {e}", path.display())))?;
    let cfg = if value.get("network").is_some() {
        ExperimentSpec::from_json(&text).map_err(|e| e.context(path.display()))?.network
    } else {
        serde_json::from_value::<NetworkConfig>(value)
            .map_err(|e| CliError::usage(format!("{}: invalid network config: {e}", path.display())))?
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parity {
    pub ubru: usize,
    pub gru: usize,
    pub lbru: usize,
    pub bigru: usize,
}

impl Parity {
    pub fn holds(&self) -> bool {
        self.ubru == self.gru && self.lbru < self.bigru
    }
}

/// Recurrent counts at the shape of `cfg`, priors frozen for UBRU as the
/// equality requires and taken from `cfg` for LBRU.
pub fn parity(cfg: &NetworkConfig) -> CliResult<Parity> {
    let count = |cell, bi, frozen| -> CliResult<usize> {
        let c = NetworkConfig {
            cell,
            bidirectional: bi,
            freeze_prior: frozen,
            ..cfg.clone()
        };
        Ok(param_count(&c)?.recurrent_total)
    };
    Ok(Parity {
        ubru: count(CellKind::Ubru, false, true)?,
        gru: count(CellKind::Gru, false, true)?,
        lbru: count(CellKind::Lbru, false, cfg.freeze_prior)?,
        bigru: count(CellKind::Gru, true, true)?,
    })
}

pub fn param_audit(config: &Path, assert_parity: bool, out: &mut dyn Write) -> CliResult<ExitCode> {
    let cfg = load_network_config(config)?;
    writeln!(out, "{}", param_count(&cfg)?)?;
    if !assert_parity {
        return Ok(ExitCode::Success);
    }
    let p = parity(&cfg)?;
    writeln!(out, "parity  UBRU={} GRU={}  {}", p.ubru, p.gru, if p.ubru == p.gru { "equal" } else { "DIFFER" })?;
    writeln!(out, "parity  LBRU={} Bi-GRU={}  {}", p.lbru, p.bigru, if p.lbru < p.bigru { "smaller" } else { "NOT SMALLER" })?;
    Ok(if p.holds() { ExitCode::Success } else { ExitCode::Failure })
}
