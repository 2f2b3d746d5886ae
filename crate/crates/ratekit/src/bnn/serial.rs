//! Versioned JSON form of a trained network. Matrices are stored as arrays of
//! rows; floats use the shortest representation that round-trips exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DenseLayer, Network, NetworkConfig};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};

pub const NETWORK_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetworkDoc {
    format_version: u32,
    config: NetworkConfig,
    seed: u64,
    layer_shapes: Vec<[usize; 2]>,
    hidden: Vec<LayerDoc>,
    mean: Vec<Vec<f64>>,
    log_var: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], shape: (usize, usize), what: &str) -> Result<Matrix> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(Error::InvalidInput(format!(
            "{what}: expected a {}x{} matrix",
            shape.0, shape.1
        )));
    }
    Ok(Matrix::from_fn(shape.0, shape.1, |i, j| rows[i][j]))
}

impl Network {
    pub fn to_json(&self) -> Result<String> {
        let doc = NetworkDoc {
            format_version: NETWORK_FORMAT_VERSION,
            config: self.config.clone(),
            seed: self.seed,
            layer_shapes: self
                .hidden
                .iter()
                .map(|l| [l.weights.nrows(), l.weights.ncols()])
                .collect(),
            hidden: self
                .hidden
                .iter()
                .map(|l| LayerDoc {
                    weights: rows(&l.weights),
                    bias: l.bias.iter().cloned().collect(),
                })
                .collect(),
            mean: rows(&self.mean),
            log_var: rows(&self.log_var),
            bias: self.bias.iter().cloned().collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Network> {
        let doc: NetworkDoc = serde_json::from_str(text)?;
        if doc.format_version != NETWORK_FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported network format version {}",
                doc.format_version
            )));
        }
        doc.config.validate()?;
        if doc.hidden.len() != doc.config.hidden_sizes.len() {
            return Err(Error::InvalidInput(
                "layer count disagrees with config".into(),
            ));
        }
        let mut fan_in = doc.config.input_dim;
        let mut hidden = Vec::with_capacity(doc.hidden.len());
        for (l, layer) in doc.hidden.iter().enumerate() {
            let width = doc.config.hidden_sizes[l];
            let weights = from_rows(&layer.weights, (fan_in, width), "hidden weights")?;
            if layer.bias.len() != width {
                return Err(Error::InvalidInput(
                    "hidden bias has the wrong length".into(),
                ));
            }
            hidden.push(DenseLayer {
                weights,
                bias: Vector::from_vec(layer.bias.clone()),
            });
            fan_in = width;
        }
        let kc = (doc.config.k(), doc.config.n_classes);
        if doc.bias.len() != kc.1 {
            return Err(Error::InvalidInput(
                "output bias has the wrong length".into(),
            ));
        }
        Ok(Network {
            mean: from_rows(&doc.mean, kc, "output mean")?,
            log_var: from_rows(&doc.log_var, kc, "output log-variance")?,
            bias: Vector::from_vec(doc.bias),
            config: doc.config,
            hidden,
            seed: doc.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Network> {
        Network::from_json(&std::fs::read_to_string(path)?)
    }
}
