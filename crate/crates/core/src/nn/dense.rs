use rand::Rng;

use super::{he_uniform, Layer, Param, ParamGroup};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Affine map `y = x·W + b` with `W: [inputs × outputs]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    cached_input: Option<Tensor>,
}

impl Dense {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self::from_parts(
            he_uniform(rng, inputs, &[inputs, outputs]),
            Tensor::zeros(&[outputs]),
        )
        .expect("consistent shapes")
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        let (_, n) = weight.dims2()?;
        if bias.shape() != [n] {
            return Err(Error::Dimension(format!(
                "bias {:?} for weight {:?}",
                bias.shape(),
                weight.shape()
            )));
        }
        Ok(Self {
            weight: Param::new(weight, ParamGroup::Weight),
            bias: Param::new(bias, ParamGroup::Bias),
            cached_input: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[1]
    }
}

impl Layer for Dense {
    fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let (_, m) = input.dims2()?;
        if m != self.inputs() {
            return Err(Error::Dimension(format!(
                "dense layer expects {} columns, got {m}",
                self.inputs()
            )));
        }
        let mut out = input.matmul(&self.weight.value)?;
        let bias = self.bias.value.data();
        let (rows, _) = out.dims2()?;
        for r in 0..rows {
            out.row_mut(r).iter_mut().zip(bias).for_each(|(o, b)| *o += b);
        }
        Ok(out)
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = self.infer(input)?;
        self.cached_input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let input = self
            .cached_input
            .as_ref()
            .ok_or_else(|| Error::Validation("dense backward before forward".into()))?;
        let (rows, n) = grad_output.dims2()?;
        if n != self.outputs() || rows != input.shape()[0] {
            return Err(Error::Dimension("dense backward gradient shape".into()));
        }
        self.weight.grad.add_assign(&input.t_matmul(grad_output)?)?;
        let db = self.bias.grad.data_mut();
        for r in 0..rows {
            db.iter_mut()
                .zip(grad_output.row(r))
                .for_each(|(d, g)| *d += g);
        }
        grad_output.matmul_t(&self.weight.value)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Elementwise `max(0, x)`.
#[derive(Debug, Clone, Default)]
pub struct Relu {
    cached_input: Option<Tensor>,
}

impl Layer for Relu {
    fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut out = input.clone();
        out.map_inplace(|v| v.max(0.0));
        Ok(out)
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = self.infer(input)?;
        self.cached_input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let input = self
            .cached_input
            .as_ref()
            .ok_or_else(|| Error::Validation("relu backward before forward".into()))?;
        if input.shape() != grad_output.shape() {
            return Err(Error::Dimension("relu backward gradient shape".into()));
        }
        let mut grad = grad_output.clone();
        grad.data_mut()
            .iter_mut()
            .zip(input.data())
            .for_each(|(g, x)| {
                if *x <= 0.0 {
                    *g = 0.0;
                }
            });
        Ok(grad)
    }

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}
