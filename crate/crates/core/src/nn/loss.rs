use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Training targets for one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// One label per output row.
    Single(Vec<usize>),
    /// For a `[B × heads·K]` output, one label vector of length `B` per head.
    Heads(Vec<Vec<usize>>),
}

/// Numerically stable row-wise softmax of a 2-D tensor.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (rows, _) = logits.dims2()?;
    let mut out = logits.clone();
    for r in 0..rows {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)` and its
/// gradient `(softmax − onehot) / B` with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (rows, classes) = logits.dims2()?;
    if labels.len() != rows {
        return Err(Error::Dimension(format!(
            "{} labels for {rows} rows",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Index(format!("label {bad} with {classes} classes")));
    }
    let mut grad = logits.clone();
    let mut loss = 0.0;
    let scale = 1.0 / rows as f64;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += log_sum - row[label];
        let g = grad.row_mut(r);
        softmax_in_place(g);
        g[label] -= 1.0;
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((loss * scale, grad))
}

/// Sum over heads of the per-head mean cross-entropy on a `[B × heads·K]`
/// logit block.
pub fn multi_head_cross_entropy(logits: &Tensor, labels: &[Vec<usize>]) -> Result<(f64, Tensor)> {
    let (rows, width) = logits.dims2()?;
    let heads = labels.len();
    if heads == 0 || width % heads != 0 {
        return Err(Error::Dimension(format!(
            "{width} logit columns for {heads} heads"
        )));
    }
    let k = width / heads;
    let mut grad = Tensor::zeros(&[rows, width]);
    let mut total = 0.0;
    for (h, head_labels) in labels.iter().enumerate() {
        let mut block = Tensor::zeros(&[rows, k]);
        for r in 0..rows {
            block.row_mut(r).copy_from_slice(&logits.row(r)[h * k..(h + 1) * k]);
        }
        let (loss, g) = softmax_cross_entropy(&block, head_labels)?;
        total += loss;
        for r in 0..rows {
            grad.row_mut(r)[h * k..(h + 1) * k].copy_from_slice(g.row(r));
        }
    }
    Ok((total, grad))
}

pub fn loss_and_grad(logits: &Tensor, targets: &Targets) -> Result<(f64, Tensor)> {
    match targets {
        Targets::Single(labels) => softmax_cross_entropy(logits, labels),
        Targets::Heads(labels) => multi_head_cross_entropy(logits, labels),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo_random(shape: &[usize], seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let (loss, _) = softmax_cross_entropy(&Tensor::zeros(&[3, 5]), &[0, 2, 4]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        assert!((loss - 1.6094).abs() < 1e-4);
    }

    #[test]
    fn confident_correct_logit() {
        let logits = Tensor::from_rows(&[vec![10.0, 0.0]]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
        // ln(1 + e^-10)
        let expected = (1.0 + (-10f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-15);
        assert!((loss - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn label_out_of_range() {
        let err = softmax_cross_entropy(&Tensor::zeros(&[1, 3]), &[3]).unwrap_err();
        assert!(matches!(err, Error::Index(_)));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let logits = pseudo_random(&[3, 4], 11);
        let labels = [1, 3, 0];
        let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        let h = 1e-5;
        for i in 0..logits.len() {
            let mut plus = logits.clone();
            plus.data_mut()[i] += h;
            let mut minus = logits.clone();
            minus.data_mut()[i] -= h;
            let numeric = (softmax_cross_entropy(&plus, &labels).unwrap().0
                - softmax_cross_entropy(&minus, &labels).unwrap().0)
                / (2.0 * h);
            let analytic = grad.data()[i];
            let rel = (numeric - analytic).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
            assert!(rel <= 1e-6, "entry {i}: {analytic} vs {numeric} (rel {rel})");
        }
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let p = softmax_rows(&pseudo_random(&[6, 5], 3)).unwrap();
        for r in 0..6 {
            let row = p.row(r);
            assert!(row.iter().all(|v| *v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let big = Tensor::from_rows(&[vec![1000.0, 0.0, -1000.0]]).unwrap();
        assert!(softmax_rows(&big).unwrap().all_finite());
    }

    #[test]
    fn multi_head_loss_is_sum_of_heads() {
        let logits = pseudo_random(&[4, 6], 5);
        let labels = vec![vec![0, 1, 2, 0], vec![2, 2, 1, 0]];
        let (total, grad) = multi_head_cross_entropy(&logits, &labels).unwrap();
        let mut expected = 0.0;
        for (h, l) in labels.iter().enumerate() {
            let mut block = Tensor::zeros(&[4, 3]);
            for r in 0..4 {
                block.row_mut(r).copy_from_slice(&logits.row(r)[h * 3..h * 3 + 3]);
            }
            let (loss, g) = softmax_cross_entropy(&block, l).unwrap();
            expected += loss;
            for r in 0..4 {
                assert_eq!(&grad.row(r)[h * 3..h * 3 + 3], g.row(r));
            }
        }
        assert!((total - expected).abs() < 1e-12);
    }
}
