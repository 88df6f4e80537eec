use std::fmt;

use serde::Serialize;

use crate::cells::{BruParams, GruParams, LstmParams, SingleGateParams, Slot, SmootherParams};
use crate::error::Result;
use crate::network::config::{CellKind, NetworkConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditEntry {
    pub name: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerAudit {
    pub layer: usize,
    pub direction: &'static str,
    pub input: usize,
    pub entries: Vec<AuditEntry>,
    pub total: usize,
}

/// Trainable scalar counts, by layer, direction and named tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamAudit {
    pub label: String,
    pub layers: Vec<LayerAudit>,
    pub readout: Vec<AuditEntry>,
    /// Recurrent layers only.
    pub recurrent_total: usize,
    pub total: usize,
}

fn cell_names(cfg: &NetworkConfig) -> Vec<&'static str> {
    let mut names: Vec<&'static str> = match cfg.cell {
        CellKind::Gru => GruParams::<()>::NAMES.to_vec(),
        CellKind::Lstm => LstmParams::<()>::NAMES.to_vec(),
        CellKind::Bru | CellKind::Ubru | CellKind::Lbru => BruParams::<()>::NAMES.to_vec(),
        CellKind::Mgu | CellKind::LiGru => SingleGateParams::<()>::NAMES.to_vec(),
    };
    if cfg.cell.is_bru_family() && !cfg.freeze_prior {
        names.push("p_logits");
    }
    if cfg.cell == CellKind::Lbru {
        names.extend_from_slice(SmootherParams::<()>::NAMES);
    }
    names
}

/// Counts follow from the configuration alone; no network is built.
pub fn param_count(cfg: &NetworkConfig) -> Result<ParamAudit> {
    cfg.validate()?;
    let names = cell_names(cfg);
    let h = cfg.hidden;
    let mut layers = Vec::new();
    for l in 0..cfg.layers {
        let input = cfg.layer_input(l);
        let dirs: &[&'static str] = if cfg.bidirectional { &["forward", "backward"] } else { &["forward"] };
        for &direction in dirs {
            let entries: Vec<AuditEntry> = names
                .iter()
                .map(|n| AuditEntry {
                    name: n.to_string(),
                    count: Slot::of(n).count(input, h),
                })
                .collect();
            let total = entries.iter().map(|e| e.count).sum();
            layers.push(LayerAudit {
                layer: l,
                direction,
                input,
                entries,
                total,
            });
        }
    }
    let d = cfg.output_dim();
    let readout = vec![
        AuditEntry {
            name: "W_out".into(),
            count: cfg.num_classes * d,
        },
        AuditEntry {
            name: "b_out".into(),
            count: cfg.num_classes,
        },
    ];
    let recurrent_total: usize = layers.iter().map(|l| l.total).sum();
    let total = recurrent_total + readout.iter().map(|e| e.count).sum::<usize>();
    Ok(ParamAudit {
        label: cfg.label(),
        layers,
        readout,
        recurrent_total,
        total,
    })
}

impl ParamAudit {
    /// Count of the first recurrent layer, both directions included.
    pub fn first_layer(&self) -> usize {
        self.layers.iter().filter(|l| l.layer == 0).map(|l| l.total).sum()
    }
}

impl fmt::Display for ParamAudit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.label)?;
        writeln!(f, "  {:<6} {:<9} {:<8} {:>10}", "layer", "direction", "tensor", "count")?;
        for layer in &self.layers {
            for e in &layer.entries {
                writeln!(f, "  {:<6} {:<9} {:<8} {:>10}", layer.layer, layer.direction, e.name, e.count)?;
            }
            writeln!(f, "  {:<6} {:<9} {:<8} {:>10}", layer.layer, layer.direction, "subtotal", layer.total)?;
        }
        for e in &self.readout {
            writeln!(f, "  {:<6} {:<9} {:<8} {:>10}", "-", "readout", e.name, e.count)?;
        }
        writeln!(f, "  {:<25} {:>10}", "recurrent", self.recurrent_total)?;
        write!(f, "  {:<25} {:>10}", "total", self.total)
    }
}
