use serde::{Deserialize, Serialize};

use super::network::{Dense, Network, OutputHead};
use crate::error::{Error, Result};

pub const NETWORK_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDoc {
    pub input_dim: usize,
    pub output_dim: usize,
    /// Row-major `output_dim × input_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: super::network::Activation,
}

/// Standardization constants stored alongside a network.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Standardization {
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDocument {
    pub schema_version: u32,
    pub dims: Vec<usize>,
    pub layers: Vec<LayerDoc>,
    pub heads: Vec<OutputHead>,
    #[serde(default)]
    pub standardization: Standardization,
}

impl NetworkDocument {
    pub fn from_network(net: &Network, standardization: Standardization) -> Self {
        NetworkDocument {
            schema_version: NETWORK_SCHEMA_VERSION,
            dims: net.dims(),
            layers: net
                .layers
                .iter()
                .map(|l| LayerDoc {
                    input_dim: l.input_dim(),
                    output_dim: l.output_dim(),
                    weights: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                    activation: l.activation,
                })
                .collect(),
            heads: net.heads.clone(),
            standardization,
        }
    }

    pub fn to_network(&self) -> Result<Network> {
        if self.schema_version != NETWORK_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported network schema version {}",
                self.schema_version
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (k, l) in self.layers.iter().enumerate() {
            let weight = ndarray::Array2::from_shape_vec((l.output_dim, l.input_dim), l.weights.clone())
                .map_err(|e| Error::Format(format!("layer {k} weights: {e}")))?;
            layers.push(Dense {
                weight,
                bias: ndarray::Array1::from(l.bias.clone()),
                activation: l.activation,
            });
        }
        let net = Network::from_layers(layers, self.heads.clone())?;
        if net.dims() != self.dims {
            return Err(Error::Format("layer dims disagree with header".into()));
        }
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
