//! Parameter persistence: flat little-endian `f64` files described by a
//! JSON manifest of layer specs.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{LayerSpec, Network};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkManifest {
    pub layers: Vec<LayerSpec>,
    /// Shape of every parameter tensor in file order.
    pub tensors: Vec<Vec<usize>>,
    pub param_count: usize,
}

impl NetworkManifest {
    pub fn of(net: &Network) -> Self {
        Self {
            layers: net.specs(),
            tensors: net.params().iter().map(|p| p.value.shape().to_vec()).collect(),
            param_count: net.param_count(),
        }
    }
}

pub fn encode_f64s(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f64s(bytes: &[u8]) -> Option<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return None;
    }
    Some(
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    )
}

pub fn write_f64_file(path: &Path, values: &[f64]) -> Result<()> {
    fs::write(path, encode_f64s(values)).map_err(|e| Error::io(path, e))
}

pub fn read_f64_file(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_f64s(&bytes).ok_or_else(|| Error::Corrupt {
        path: path.to_owned(),
        reason: format!("{} bytes is not a whole number of f64s", bytes.len()),
    })
}

pub fn save_network(net: &Network, path: &Path) -> Result<NetworkManifest> {
    write_f64_file(path, &net.flat_params())?;
    Ok(NetworkManifest::of(net))
}

pub fn load_network(manifest: &NetworkManifest, path: &Path) -> Result<Network> {
    // initial values are overwritten below
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut net = Network::build(&manifest.layers, &mut rng)?;
    let shapes: Vec<Vec<usize>> = net.params().iter().map(|p| p.value.shape().to_vec()).collect();
    if shapes != manifest.tensors {
        return Err(Error::Corrupt {
            path: path.to_owned(),
            reason: "tensor shapes disagree with layer specs".into(),
        });
    }
    let values = read_f64_file(path)?;
    if values.len() != manifest.param_count {
        return Err(Error::Corrupt {
            path: path.to_owned(),
            reason: format!("{} values, manifest says {}", values.len(), manifest.param_count),
        });
    }
    net.load_flat_params(&values)?;
    Ok(net)
}
