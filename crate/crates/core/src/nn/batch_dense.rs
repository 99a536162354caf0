//! Rank-1 batch-ensemble dense layer.
//!
//! Member `i` uses the effective weight `W ⊙ (r_i s_iᵀ)`. The fused pass never
//! materialises it: for the `i`-th block of the tiled input,
//! `y = ((x ⊙ r_i) · W) ⊙ s_i + b_i`.

use rand::Rng;

use super::{he_uniform, Layer, Param, ParamGroup};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct BatchEnsembleDense {
    /// Shared slow weight `[inputs × outputs]`.
    pub weight: Param,
    /// Input-side fast weights `[members × inputs]`.
    pub fast_r: Param,
    /// Output-side fast weights `[members × outputs]`.
    pub fast_s: Param,
    /// Per-member bias `[members × outputs]`.
    pub bias: Param,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    input: Tensor,
    scaled_input: Tensor,
    pre_scale: Tensor,
}

impl BatchEnsembleDense {
    /// He-uniform slow weight, random ±1 fast weights, zero biases.
    pub fn new<R: Rng>(inputs: usize, outputs: usize, members: usize, rng: &mut R) -> Self {
        let weight = he_uniform(rng, inputs, &[inputs, outputs]);
        let mut sign = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect()
        };
        let r = Tensor::new(vec![members, inputs], sign(members * inputs)).expect("shape");
        let s = Tensor::new(vec![members, outputs], sign(members * outputs)).expect("shape");
        Self::from_parts(weight, r, s, Tensor::zeros(&[members, outputs])).expect("shapes")
    }

    pub fn from_parts(weight: Tensor, r: Tensor, s: Tensor, bias: Tensor) -> Result<Self> {
        let (m, n) = weight.dims2()?;
        let (members, rm) = r.dims2()?;
        if rm != m || s.shape() != [members, n] || bias.shape() != [members, n] || members == 0 {
            return Err(Error::Dimension(format!(
                "batch-ensemble parts W{:?} r{:?} s{:?} b{:?}",
                weight.shape(),
                r.shape(),
                s.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            weight: Param::new(weight, ParamGroup::Weight),
            fast_r: Param::new(r, ParamGroup::Fast),
            fast_s: Param::new(s, ParamGroup::Fast),
            bias: Param::new(bias, ParamGroup::Bias),
            cache: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn members(&self) -> usize {
        self.fast_r.value.shape()[0]
    }

    /// Explicit `W ⊙ r_i s_iᵀ` for member `i`.
    pub fn member_weight(&self, i: usize) -> Tensor {
        let (m, n) = (self.inputs(), self.outputs());
        let r = self.fast_r.value.row(i);
        let s = self.fast_s.value.row(i);
        let w = self.weight.value.data();
        let data = (0..m * n).map(|k| w[k] * r[k / n] * s[k % n]).collect();
        Tensor::new(vec![m, n], data).expect("shape")
    }

    pub fn member_bias(&self, i: usize) -> Tensor {
        Tensor::new(vec![self.outputs()], self.bias.value.row(i).to_vec()).expect("shape")
    }

    fn block_rows(&self, input: &Tensor) -> Result<usize> {
        let (rows, cols) = input.dims2()?;
        if cols != self.inputs() {
            return Err(Error::Dimension(format!(
                "batch-ensemble layer expects {} columns, got {cols}",
                self.inputs()
            )));
        }
        if rows % self.members() != 0 {
            return Err(Error::Dimension(format!(
                "{rows} rows do not tile into {} members",
                self.members()
            )));
        }
        Ok(rows / self.members())
    }

    fn run(&self, input: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let block = self.block_rows(input)?;
        let mut scaled = input.clone();
        for row in 0..input.shape()[0] {
            let r = self.fast_r.value.row(row / block.max(1));
            scaled.row_mut(row).iter_mut().zip(r).for_each(|(x, f)| *x *= f);
        }
        let pre = scaled.matmul(&self.weight.value)?;
        let mut out = pre.clone();
        for row in 0..input.shape()[0] {
            let member = row / block.max(1);
            let s = self.fast_s.value.row(member);
            let b = self.bias.value.row(member);
            out.row_mut(row)
                .iter_mut()
                .zip(s.iter().zip(b))
                .for_each(|(y, (s, b))| *y = *y * s + b);
        }
        Ok((scaled, pre, out))
    }
}

impl Layer for BatchEnsembleDense {
    fn infer(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.run(input)?.2)
    }

    fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let (scaled_input, pre_scale, out) = self.run(input)?;
        self.cache = Some(Cache {
            input: input.clone(),
            scaled_input,
            pre_scale,
        });
        Ok(out)
    }

    fn backward(&mut self, grad_output: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Validation("batch-ensemble backward before forward".into()))?;
        if grad_output.shape() != cache.pre_scale.shape() {
            return Err(Error::Dimension("batch-ensemble backward gradient shape".into()));
        }
        let rows = grad_output.shape()[0];
        let block = (rows / self.members()).max(1);

        let mut scaled_grad = grad_output.clone();
        {
            let ds = self.fast_s.grad.data_mut();
            let db = self.bias.grad.data_mut();
            let n = self.weight.value.shape()[1];
            for row in 0..rows {
                let member = row / block;
                let s = self.fast_s.value.row(member);
                let g = grad_output.row(row);
                let z = cache.pre_scale.row(row);
                for j in 0..n {
                    ds[member * n + j] += g[j] * z[j];
                    db[member * n + j] += g[j];
                }
                scaled_grad
                    .row_mut(row)
                    .iter_mut()
                    .zip(s)
                    .for_each(|(v, s)| *v *= s);
            }
        }
        self.weight
            .grad
            .add_assign(&cache.scaled_input.t_matmul(&scaled_grad)?)?;
        let mut grad_input = scaled_grad.matmul_t(&self.weight.value)?;
        let m = self.weight.value.shape()[0];
        let dr = self.fast_r.grad.data_mut();
        for row in 0..rows {
            let member = row / block;
            let r = self.fast_r.value.row(member);
            let x = cache.input.row(row);
            let gi = grad_input.row_mut(row);
            for k in 0..m {
                dr[member * m + k] += gi[k] * x[k];
                gi[k] *= r[k];
            }
        }
        Ok(grad_input)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.fast_r, &self.fast_s, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.weight,
            &mut self.fast_r,
            &mut self.fast_s,
            &mut self.bias,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_outer_product() {
        let layer = BatchEnsembleDense::from_parts(
            Tensor::filled(&[2, 2], 1.0),
            Tensor::from_rows(&[vec![1.0, -1.0]]).unwrap(),
            Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap(),
            Tensor::zeros(&[1, 2]),
        )
        .unwrap();
        assert_eq!(layer.member_weight(0).data(), &[1.0, 1.0, -1.0, -1.0]);
    }

    #[test]
    fn parameter_count_formula() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        use rand::SeedableRng;
        let layer = BatchEnsembleDense::new(7, 5, 3, &mut rng);
        let count: usize = layer.params().iter().map(|p| p.value.len()).sum();
        assert_eq!(count, 7 * 5 + 3 * (7 + 5) + 3 * 5);
    }

    #[test]
    fn fast_weights_are_signs() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let layer = BatchEnsembleDense::new(16, 8, 4, &mut rng);
        let all = layer.fast_r.value.data().iter().chain(layer.fast_s.value.data());
        let (mut pos, mut neg) = (0, 0);
        for v in all {
            assert!(*v == 1.0 || *v == -1.0);
            if *v > 0.0 { pos += 1 } else { neg += 1 }
        }
        assert!(pos > 0 && neg > 0);
    }

    #[test]
    fn untileable_batch_is_rejected() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let layer = BatchEnsembleDense::new(3, 2, 4, &mut rng);
        assert!(matches!(layer.infer(&Tensor::zeros(&[6, 3])), Err(Error::Dimension(_))));
    }
}
