//! Minimal feedforward training stack: layers with hand-written backward
//! passes, softmax cross-entropy, Adam with L2, and learning-rate schedules.

pub mod batch_dense;
pub mod dense;
pub mod heads;
pub mod loss;
pub mod network;
pub mod optim;
pub mod params_io;
pub mod schedule;
pub mod train;

pub use batch_dense::BatchEnsembleDense;
pub use dense::{Dense, Relu};
pub use heads::MultiHeadDense;
pub use loss::{softmax_cross_entropy, softmax_rows, Targets};
pub use network::{LayerSpec, Network};
pub use optim::{adam_step, Adam, AdamState};
pub use schedule::{lr_at, Schedule};
pub use train::{fit, BatchSource, EpochReport, TrainConfig};

use crate::error::Result;
use crate::tensor::Tensor;

/// Optimizer treatment of a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Dense and slow weights: full learning rate, L2 applied.
    Weight,
    /// Biases: full learning rate, no L2.
    Bias,
    /// Batch-ensemble fast weights: scaled learning rate, L2 applied.
    Fast,
}

/// A trainable tensor together with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub group: ParamGroup,
}

impl Param {
    pub fn new(value: Tensor, group: ParamGroup) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad, group }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// A differentiable layer.
///
/// `forward` caches whatever `backward` needs; `backward` accumulates into
/// the parameter gradients and returns the gradient with respect to the input.
pub trait Layer {
    /// Forward pass without touching the backward cache.
    fn infer(&self, input: &Tensor) -> Result<Tensor>;
    fn forward(&mut self, input: &Tensor) -> Result<Tensor>;
    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor>;
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
}

/// He-uniform initialisation bound `sqrt(6 / fan_in)`.
pub(crate) fn he_uniform<R: rand::Rng>(rng: &mut R, fan_in: usize, shape: &[usize]) -> Tensor {
    use rand::distr::{Distribution, Uniform};
    let limit = (6.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bound");
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect())
        .expect("shape matches length")
}
