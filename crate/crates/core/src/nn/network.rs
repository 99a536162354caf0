use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BatchEnsembleDense, Dense, Layer, MultiHeadDense, Param, Relu};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Architecture description of one layer, used to rebuild a network before
/// loading its parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    Relu,
    BatchDense { inputs: usize, outputs: usize, members: usize },
    Heads { inputs: usize, outputs: usize, heads: usize },
}

#[derive(Debug, Clone)]
enum AnyLayer {
    Dense(Dense),
    Relu(Relu),
    BatchDense(BatchEnsembleDense),
    Heads(MultiHeadDense),
}

impl AnyLayer {
    fn as_layer(&self) -> &dyn Layer {
        match self {
            AnyLayer::Dense(l) => l,
            AnyLayer::Relu(l) => l,
            AnyLayer::BatchDense(l) => l,
            AnyLayer::Heads(l) => l,
        }
    }

    fn as_layer_mut(&mut self) -> &mut dyn Layer {
        match self {
            AnyLayer::Dense(l) => l,
            AnyLayer::Relu(l) => l,
            AnyLayer::BatchDense(l) => l,
            AnyLayer::Heads(l) => l,
        }
    }

    fn spec(&self) -> LayerSpec {
        match self {
            AnyLayer::Dense(l) => LayerSpec::Dense {
                inputs: l.inputs(),
                outputs: l.outputs(),
            },
            AnyLayer::Relu(_) => LayerSpec::Relu,
            AnyLayer::BatchDense(l) => LayerSpec::BatchDense {
                inputs: l.inputs(),
                outputs: l.outputs(),
                members: l.members(),
            },
            AnyLayer::Heads(l) => LayerSpec::Heads {
                inputs: l.inputs(),
                outputs: l.outputs_per_head(),
                heads: l.head_count(),
            },
        }
    }
}

/// A sequential stack of layers.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<AnyLayer>,
}

impl Network {
    /// Builds and randomly initialises a network from its layer specs.
    pub fn build<R: Rng>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let mut width: Option<usize> = None;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let (inputs, outputs) = match *spec {
                LayerSpec::Dense { inputs, outputs } => {
                    layers.push(AnyLayer::Dense(Dense::new(inputs, outputs, rng)));
                    (Some(inputs), outputs)
                }
                LayerSpec::Relu => {
                    layers.push(AnyLayer::Relu(Relu::default()));
                    match width {
                        Some(w) => (None, w),
                        None => return Err(Error::Config("network cannot start with relu".into())),
                    }
                }
                LayerSpec::BatchDense { inputs, outputs, members } => {
                    if members == 0 {
                        return Err(Error::Config("batch-ensemble layer with zero members".into()));
                    }
                    layers.push(AnyLayer::BatchDense(BatchEnsembleDense::new(
                        inputs, outputs, members, rng,
                    )));
                    (Some(inputs), outputs)
                }
                LayerSpec::Heads { inputs, outputs, heads } => {
                    if heads == 0 {
                        return Err(Error::Config("multi-head layer with zero heads".into()));
                    }
                    layers.push(AnyLayer::Heads(MultiHeadDense::new(inputs, outputs, heads, rng)));
                    (Some(inputs), outputs * heads)
                }
            };
            if let (Some(prev), Some(inp)) = (width, inputs) {
                if prev != inp {
                    return Err(Error::Config(format!(
                        "layer {spec:?} takes {inp} inputs but previous layer emits {prev}"
                    )));
                }
            }
            if outputs == 0 || inputs == Some(0) {
                return Err(Error::Config(format!("zero-width layer {spec:?}")));
            }
            width = Some(outputs);
        }
        if layers.is_empty() {
            return Err(Error::Config("empty network".into()));
        }
        Ok(Self { layers })
    }

    pub fn from_dense(layers: Vec<Dense>, relu_between: bool) -> Self {
        let n = layers.len();
        let mut out = Vec::new();
        for (i, l) in layers.into_iter().enumerate() {
            out.push(AnyLayer::Dense(l));
            if relu_between && i + 1 < n {
                out.push(AnyLayer::Relu(Relu::default()));
            }
        }
        Self { layers: out }
    }

    pub fn from_batch_dense(layers: Vec<BatchEnsembleDense>) -> Self {
        let n = layers.len();
        let mut out = Vec::new();
        for (i, l) in layers.into_iter().enumerate() {
            out.push(AnyLayer::BatchDense(l));
            if i + 1 < n {
                out.push(AnyLayer::Relu(Relu::default()));
            }
        }
        Self { layers: out }
    }

    /// Keeps the first `len` layers (at least one).
    pub fn truncate(&mut self, len: usize) {
        self.layers.truncate(len.max(1));
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(AnyLayer::spec).collect()
    }

    pub fn input_width(&self) -> usize {
        match self.layers[0].spec() {
            LayerSpec::Dense { inputs, .. }
            | LayerSpec::BatchDense { inputs, .. }
            | LayerSpec::Heads { inputs, .. } => inputs,
            LayerSpec::Relu => unreachable!("validated at construction"),
        }
    }

    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = self.layers[0].as_layer().infer(input)?;
        for layer in &self.layers[1..] {
            x = layer.as_layer().infer(&x)?;
        }
        Ok(x)
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let mut x = self.layers[0].as_layer_mut().forward(input)?;
        for layer in &mut self.layers[1..] {
            x = layer.as_layer_mut().forward(&x)?;
        }
        Ok(x)
    }

    /// Backpropagates `grad_output`, accumulating parameter gradients, and
    /// returns the gradient with respect to the network input.
    pub fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let mut g = grad_output.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.as_layer_mut().backward(&g)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.as_layer().params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.as_layer_mut().params_mut())
            .collect()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// All parameter values concatenated in layer order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params()
            .iter()
            .flat_map(|p| p.grad.data().iter().copied())
            .collect()
    }

    pub fn load_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "{} values for {} parameters",
                values.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn batch_dense_layers(&self) -> Vec<&BatchEnsembleDense> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                AnyLayer::BatchDense(b) => Some(b),
                _ => None,
            })
            .collect()
    }

    pub fn batch_dense_layers_mut(&mut self) -> Vec<&mut BatchEnsembleDense> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                AnyLayer::BatchDense(b) => Some(b),
                _ => None,
            })
            .collect()
    }

    pub fn heads_layer_mut(&mut self) -> Option<&mut MultiHeadDense> {
        self.layers.iter_mut().find_map(|l| match l {
            AnyLayer::Heads(h) => Some(h),
            _ => None,
        })
    }
}
