use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    #[serde(rename = "GRU")]
    Gru,
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "BRU")]
    Bru,
    #[serde(rename = "UBRU")]
    Ubru,
    #[serde(rename = "LBRU")]
    Lbru,
    #[serde(rename = "MGU")]
    Mgu,
    #[serde(rename = "LiGRU")]
    LiGru,
}

impl CellKind {
    pub const ALL: [CellKind; 7] = [
        CellKind::Gru,
        CellKind::Lstm,
        CellKind::Bru,
        CellKind::Ubru,
        CellKind::Lbru,
        CellKind::Mgu,
        CellKind::LiGru,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Gru => "GRU",
            CellKind::Lstm => "LSTM",
            CellKind::Bru => "BRU",
            CellKind::Ubru => "UBRU",
            CellKind::Lbru => "LBRU",
            CellKind::Mgu => "MGU",
            CellKind::LiGru => "LiGRU",
        }
    }

    /// BRU, UBRU and LBRU share the BRU forward recursion.
    pub fn is_bru_family(self) -> bool {
        matches!(self, CellKind::Bru | CellKind::Ubru | CellKind::Lbru)
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CellKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown cell `{s}`")))
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub cell: CellKind,
    pub layers: usize,
    pub hidden: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub bidirectional: bool,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_true")]
    pub freeze_prior: bool,
}

impl NetworkConfig {
    pub fn new(cell: CellKind, layers: usize, hidden: usize, input_dim: usize, num_classes: usize) -> Self {
        NetworkConfig {
            cell,
            layers,
            hidden,
            input_dim,
            num_classes,
            bidirectional: false,
            dropout: 0.0,
            freeze_prior: true,
        }
    }

    pub fn bidirectional(mut self, on: bool) -> Self {
        self.bidirectional = on;
        self
    }

    pub fn dropout(mut self, rate: f64) -> Self {
        self.dropout = rate;
        self
    }

    pub fn freeze_prior(mut self, on: bool) -> Self {
        self.freeze_prior = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("input_dim", self.input_dim),
            ("num_classes", self.num_classes),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{what} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// Input width of layer `l`.
    pub fn layer_input(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.directions() * self.hidden
        }
    }

    /// Width of the features fed to the readout.
    pub fn output_dim(&self) -> usize {
        self.directions() * self.hidden
    }

    /// Conventional label, e.g. `Bi-LBRU` or `Uni-GRU`.
    pub fn label(&self) -> String {
        format!("{}-{}", if self.bidirectional { "Bi" } else { "Uni" }, self.cell)
    }
}
