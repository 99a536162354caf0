use rand::Rng;

use super::{Dense, Layer, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `heads` independent affine maps sharing one input, outputs concatenated
/// column-wise: `[B × inputs] -> [B × heads·outputs]`.
#[derive(Debug, Clone)]
pub struct MultiHeadDense {
    heads: Vec<Dense>,
}

impl MultiHeadDense {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, heads: usize, rng: &mut R) -> Self {
        Self {
            heads: (0..heads).map(|_| Dense::new(inputs, outputs, rng)).collect(),
        }
    }

    pub fn from_heads(heads: Vec<Dense>) -> Result<Self> {
        let Some(first) = heads.first() else {
            return Err(Error::Validation("multi-head layer needs at least one head".into()));
        };
        let (m, n) = (first.inputs(), first.outputs());
        if heads.iter().any(|h| h.inputs() != m || h.outputs() != n) {
            return Err(Error::Dimension("heads differ in shape".into()));
        }
        Ok(Self { heads })
    }

    pub fn heads(&self) -> &[Dense] {
        &self.heads
    }

    pub fn into_heads(self) -> Vec<Dense> {
        self.heads
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn inputs(&self) -> usize {
        self.heads[0].inputs()
    }

    pub fn outputs_per_head(&self) -> usize {
        self.heads[0].outputs()
    }

    fn concat(&self, parts: Vec<Tensor>) -> Result<Tensor> {
        let rows = parts[0].shape()[0];
        let k = self.outputs_per_head();
        let width = k * parts.len();
        let mut out = Tensor::zeros(&[rows, width]);
        for (h, part) in parts.iter().enumerate() {
            for r in 0..rows {
                out.row_mut(r)[h * k..(h + 1) * k].copy_from_slice(part.row(r));
            }
        }
        Ok(out)
    }
}

impl Layer for MultiHeadDense {
    fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let parts = self
            .heads
            .iter()
            .map(|h| h.infer(input))
            .collect::<Result<Vec<_>>>()?;
        self.concat(parts)
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let parts = self
            .heads
            .iter_mut()
            .map(|h| h.forward(input))
            .collect::<Result<Vec<_>>>()?;
        self.concat(parts)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let (rows, width) = grad_output.dims2()?;
        let k = self.outputs_per_head();
        if width != k * self.heads.len() {
            return Err(Error::Dimension("multi-head backward gradient shape".into()));
        }
        let mut grad_input: Option<Tensor> = None;
        for (h, head) in self.heads.iter_mut().enumerate() {
            let mut g = Tensor::zeros(&[rows, k]);
            for r in 0..rows {
                g.row_mut(r).copy_from_slice(&grad_output.row(r)[h * k..(h + 1) * k]);
            }
            let gi = head.backward(&g)?;
            match grad_input.as_mut() {
                Some(acc) => acc.add_assign(&gi)?,
                None => grad_input = Some(gi),
            }
        }
        Ok(grad_input.expect("at least one head"))
    }

    fn params(&self) -> Vec<&Param> {
        self.heads.iter().flat_map(|h| h.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.heads.iter_mut().flat_map(|h| h.params_mut()).collect()
    }
}
