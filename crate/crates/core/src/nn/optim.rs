//! Adam with classical (coupled) L2 regularisation.

use super::{Network, ParamGroup};
use crate::error::{Error, Result};

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. The L2 term `l2·θ` is added to the
/// gradient before the moment update.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    l2: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len()
    {
        return Err(Error::Dimension(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let (b1, b2) = betas;
    state.t += 1;
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (((theta, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let g = g + l2 * *theta;
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *theta -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Adam over every parameter of a [`Network`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub betas: (f64, f64),
    pub eps: f64,
    /// Step-size factor for [`ParamGroup::Fast`] parameters.
    pub fast_lr_multiplier: f64,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(net: &Network, betas: (f64, f64), eps: f64, fast_lr_multiplier: f64) -> Self {
        Self {
            betas,
            eps,
            fast_lr_multiplier,
            states: net.params().iter().map(|p| AdamState::new(p.value.len())).collect(),
        }
    }

    pub fn step(&mut self, net: &mut Network, lr: f64, l2: f64) -> Result<()> {
        let params = net.params_mut();
        if params.len() != self.states.len() {
            return Err(Error::Dimension("optimizer built for a different network".into()));
        }
        for (p, state) in params.into_iter().zip(&mut self.states) {
            let (lr_p, l2_p) = match p.group {
                ParamGroup::Weight => (lr, l2),
                ParamGroup::Bias => (lr, 0.0),
                ParamGroup::Fast => (lr * self.fast_lr_multiplier, l2),
            };
            let grad = p.grad.data().to_vec();
            adam_step(p.value.data_mut(), &grad, state, lr_p, l2_p, self.betas, self.eps)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BETAS: (f64, f64) = (0.9, 0.999);

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.5, -1.5, 2.0];
        let mut s = AdamState::new(3);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0; 3], &mut s, 0.01, 0.0, BETAS, 1e-8).unwrap();
        }
        assert_eq!(p, vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![1.0, 1.0, 1.0];
        let g = [0.3, -2.0, 1e-3];
        let mut s = AdamState::new(3);
        let lr = 0.01;
        let eps = 1e-8;
        adam_step(&mut p, &g, &mut s, lr, 0.0, BETAS, eps).unwrap();
        for (theta, g) in p.iter().zip(g) {
            // m̂ = g, v̂ = g², so Δθ = −lr·g/(|g| + eps)
            let expected = 1.0 - lr * g / (g.abs() + eps);
            assert!((theta - expected).abs() < 1e-15);
            assert!(((1.0 - theta) - lr * g.signum()).abs() < lr * 1e-4);
        }
    }

    #[test]
    fn l2_shrinks_positive_params() {
        let mut p = vec![0.8];
        let mut s = AdamState::new(1);
        let mut last = p[0];
        for _ in 0..10 {
            adam_step(&mut p, &[0.0], &mut s, 0.01, 1e-3, BETAS, 1e-8).unwrap();
            assert!(p[0] < last);
            last = p[0];
        }
    }

    #[test]
    fn length_mismatch() {
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new(2);
        assert!(adam_step(&mut p, &[0.0], &mut s, 0.1, 0.0, BETAS, 1e-8).is_err());
    }
}
