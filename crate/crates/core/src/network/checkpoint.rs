use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::config::NetworkConfig;
use crate::network::model::Network;
use crate::tensor::{Rng, Tensor};

/// Serialized network: configuration plus every tensor by dotted name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub params: BTreeMap<String, Tensor>,
    pub rng_seed: u64,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn new(net: &Network, rng_seed: u64, epoch: usize) -> Checkpoint {
        let params = net.params.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
        Checkpoint {
            config: net.config.clone(),
            params,
            rng_seed,
            epoch,
        }
    }

    /// Rebuilds the network; every expected name must be present with its
    /// shape, and no others.
    pub fn network(&self) -> Result<Network> {
        let template = Network::init(self.config.clone(), &mut Rng::new(0))?;
        let mut used = 0;
        let params = template.params.try_map(|name, t| {
            let got = self
                .params
                .get(name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks {name}")))?;
            if got.shape() != t.shape() {
                return Err(Error::Dimension(format!(
                    "{name}: checkpoint has {:?}, config implies {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
            used += 1;
            Ok(got.clone())
        })?;
        if used != self.params.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} tensors, config uses {used}",
                self.params.len()
            )));
        }
        Ok(Network {
            config: self.config.clone(),
            params,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Checkpoint> {
        serde_json::from_str(s).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        Checkpoint::from_json(&s)
    }
}
