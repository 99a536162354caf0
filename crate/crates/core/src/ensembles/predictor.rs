use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Strategy;
use crate::error::{Error, Result};
use crate::nn::params_io::{load_network, save_network, NetworkManifest};
use crate::nn::{softmax_rows, Network};
use crate::tensor::Tensor;

const MANIFEST_FILE: &str = "manifest.json";
const PREDICT_CHUNK: usize = 1024;

#[derive(Debug, Clone)]
pub enum Body {
    /// Independent networks (single, deep, snapshot).
    Members(Vec<Network>),
    /// One network of batch-ensemble layers; inputs are tiled along rows.
    Batch(Network),
    /// One multi-input multi-output network; inputs are tiled along columns.
    Mimo(Network),
}

/// A trained ensemble that maps `[B × d]` inputs to per-member class
/// probabilities `[M × B × K]`.
#[derive(Debug, Clone)]
pub struct EnsemblePredictor {
    pub strategy: Strategy,
    pub members: usize,
    pub input_dim: usize,
    pub classes: usize,
    pub body: Body,
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictorManifest {
    strategy: Strategy,
    members: usize,
    input_dim: usize,
    classes: usize,
    config_hash: String,
    networks: Vec<(String, NetworkManifest)>,
}

impl EnsemblePredictor {
    pub fn networks(&self) -> Vec<&Network> {
        match &self.body {
            Body::Members(nets) => nets.iter().collect(),
            Body::Batch(net) | Body::Mimo(net) => vec![net],
        }
    }

    /// Total trainable parameters across all stored networks.
    pub fn param_count(&self) -> usize {
        self.networks().iter().map(|n| n.param_count()).sum()
    }

    pub fn predict_members(&self, inputs: &Tensor) -> Result<Tensor> {
        let (rows, cols) = inputs.dims2()?;
        if cols != self.input_dim {
            return Err(Error::Dimension(format!(
                "predictor expects {} features, got {cols}",
                self.input_dim
            )));
        }
        let (m, k) = (self.members, self.classes);
        let mut out = Tensor::zeros(&[m, rows, k]);
        let mut start = 0;
        while start < rows {
            let end = (start + PREDICT_CHUNK).min(rows);
            let idx: Vec<usize> = (start..end).collect();
            let chunk = inputs.select_rows(&idx)?;
            let probs = self.predict_chunk(&chunk)?;
            let b = end - start;
            for member in 0..m {
                for r in 0..b {
                    let dst = (member * rows + start + r) * k;
                    out.data_mut()[dst..dst + k].copy_from_slice(&probs[member * b * k + r * k..][..k]);
                }
            }
            start = end;
        }
        out.ensure_finite("ensemble probabilities")?;
        Ok(out)
    }

    /// Member-major flat probabilities for one chunk.
    fn predict_chunk(&self, x: &Tensor) -> Result<Vec<f64>> {
        let b = x.shape()[0];
        let (m, k) = (self.members, self.classes);
        match &self.body {
            Body::Members(nets) => {
                let mut flat = Vec::with_capacity(m * b * k);
                for net in nets {
                    flat.extend(softmax_rows(&net.infer(x)?)?.into_data());
                }
                Ok(flat)
            }
            // rows are member blocks, matching the order of `tile_rows`
            Body::Batch(net) => Ok(softmax_rows(&net.infer(&x.tile_rows(m)?)?)?.into_data()),
            Body::Mimo(net) => {
                let logits = net.infer(&x.tile_cols(m)?)?;
                let mut flat = Vec::with_capacity(m * b * k);
                for head in 0..m {
                    let mut part = Tensor::zeros(&[b, k]);
                    for r in 0..b {
                        part.row_mut(r).copy_from_slice(&logits.row(r)[head * k..(head + 1) * k]);
                    }
                    flat.extend(softmax_rows(&part)?.into_data());
                }
                Ok(flat)
            }
        }
    }

    pub fn save(&self, dir: &Path, config_hash: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut networks = Vec::new();
        let named: Vec<(String, &Network)> = match &self.body {
            Body::Members(nets) => nets.iter().enumerate().map(|(i, n)| (format!("member_{i}.bin"), n)).collect(),
            Body::Batch(net) | Body::Mimo(net) => vec![("network.bin".to_string(), net)],
        };
        for (file, net) in named {
            let manifest = save_network(net, &dir.join(&file))?;
            networks.push((file, manifest));
        }
        let manifest = PredictorManifest {
            strategy: self.strategy,
            members: self.members,
            input_dim: self.input_dim,
            classes: self.classes,
            config_hash: config_hash.to_string(),
            networks,
        };
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    /// Loads a saved predictor together with the config hash it was saved under.
    pub fn load(dir: &Path) -> Result<(Self, String)> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: PredictorManifest = serde_json::from_slice(&bytes)?;
        let mut nets = Vec::with_capacity(manifest.networks.len());
        for (file, net_manifest) in &manifest.networks {
            nets.push(load_network(net_manifest, &dir.join(file))?);
        }
        let corrupt = |reason: &str| Error::Corrupt { path: path.clone(), reason: reason.into() };
        let body = match manifest.strategy {
            Strategy::Single | Strategy::Deep | Strategy::Snapshot => {
                if nets.len() != manifest.members {
                    return Err(corrupt("member count disagrees with stored networks"));
                }
                Body::Members(nets)
            }
            Strategy::Batch | Strategy::Mimo => {
                let [net] = <[Network; 1]>::try_from(nets).map_err(|_| corrupt("expected one network"))?;
                if manifest.strategy == Strategy::Batch {
                    Body::Batch(net)
                } else {
                    Body::Mimo(net)
                }
            }
        };
        let predictor = Self {
            strategy: manifest.strategy,
            members: manifest.members,
            input_dim: manifest.input_dim,
            classes: manifest.classes,
            body,
        };
        Ok((predictor, manifest.config_hash))
    }
}
