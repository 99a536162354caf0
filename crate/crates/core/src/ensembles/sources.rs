//! Minibatch construction for each training strategy.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{BatchSource, Targets};
use crate::synth::random_flip;
use crate::tensor::Tensor;

/// Inputs and labels for training, plus the image side when random flips
/// should be applied to every drawn example.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub inputs: &'a Tensor,
    pub labels: &'a [usize],
    pub flip_side: Option<usize>,
}

impl<'a> TrainingData<'a> {
    pub fn new(inputs: &'a Tensor, labels: &'a [usize]) -> Result<Self> {
        let (rows, _) = inputs.dims2()?;
        if rows != labels.len() {
            return Err(Error::Dimension(format!("{rows} inputs, {} labels", labels.len())));
        }
        Ok(Self { inputs, labels, flip_side: None })
    }

    pub fn with_flips(mut self, side: usize) -> Self {
        self.flip_side = Some(side);
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.shape()[1]
    }

    fn gather(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let mut x = self.inputs.select_rows(idx)?;
        if let Some(side) = self.flip_side {
            for r in 0..idx.len() {
                random_flip(x.row_mut(r), side, rng);
            }
        }
        Ok(x)
    }
}

/// Shuffled minibatches; with `tile > 1` every batch is repeated that many
/// times along the row axis (batch ensemble).
pub struct PlainSource<'a> {
    data: TrainingData<'a>,
    tile: usize,
    order: Vec<usize>,
}

impl<'a> PlainSource<'a> {
    pub fn new(data: TrainingData<'a>, tile: usize) -> Self {
        Self {
            order: (0..data.len()).collect(),
            data,
            tile: tile.max(1),
        }
    }
}

impl BatchSource for PlainSource<'_> {
    fn examples(&self) -> usize {
        self.data.len()
    }

    fn begin_epoch(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        self.order.shuffle(rng);
        Ok(())
    }

    fn batch(&mut self, rng: &mut ChaCha8Rng, range: Range<usize>) -> Result<(Tensor, Targets)> {
        let idx = &self.order[range];
        let x = self.data.gather(idx, rng)?;
        let labels: Vec<usize> = idx.iter().map(|&i| self.data.labels[i]).collect();
        if self.tile == 1 {
            return Ok((x, Targets::Single(labels)));
        }
        let tiled_labels = labels.repeat(self.tile);
        Ok((x.tile_rows(self.tile)?, Targets::Single(tiled_labels)))
    }
}

/// Multi-input batches: each head has its own epoch permutation, and with
/// probability `input_repetition` a slot ties every head to head 0's example.
pub struct MimoSource<'a> {
    data: TrainingData<'a>,
    heads: usize,
    input_repetition: f64,
    batch_repetition: usize,
    orders: Vec<Vec<usize>>,
    /// Example indices of the most recent batch, one vector per head.
    last_indices: Vec<Vec<usize>>,
}

impl<'a> MimoSource<'a> {
    pub fn new(data: TrainingData<'a>, heads: usize, input_repetition: f64, batch_repetition: usize) -> Self {
        Self {
            orders: vec![(0..data.len()).collect(); heads],
            data,
            heads,
            input_repetition,
            batch_repetition: batch_repetition.max(1),
            last_indices: Vec::new(),
        }
    }

    pub fn last_indices(&self) -> &[Vec<usize>] {
        &self.last_indices
    }
}

impl BatchSource for MimoSource<'_> {
    fn examples(&self) -> usize {
        self.data.len()
    }

    fn begin_epoch(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        for order in &mut self.orders {
            order.shuffle(rng);
        }
        Ok(())
    }

    fn batch(&mut self, rng: &mut ChaCha8Rng, range: Range<usize>) -> Result<(Tensor, Targets)> {
        let base: Vec<Vec<usize>> = self.orders.iter().map(|o| o[range.clone()].to_vec()).collect();
        let mut per_head: Vec<Vec<usize>> = vec![Vec::new(); self.heads];
        for copy in 0..self.batch_repetition {
            let mut draw = base.clone();
            if copy > 0 {
                for head in draw.iter_mut().skip(1) {
                    head.shuffle(rng);
                }
            }
            for slot in 0..draw[0].len() {
                if self.input_repetition > 0.0 && rng.random::<f64>() < self.input_repetition {
                    let first = draw[0][slot];
                    draw.iter_mut().skip(1).for_each(|h| h[slot] = first);
                }
            }
            for (acc, head) in per_head.iter_mut().zip(draw) {
                acc.extend(head);
            }
        }
        let rows = per_head[0].len();
        let d = self.data.dim();
        let mut x = Tensor::zeros(&[rows, d * self.heads]);
        for (h, idx) in per_head.iter().enumerate() {
            let part = self.data.gather(idx, rng)?;
            for r in 0..rows {
                x.row_mut(r)[h * d..(h + 1) * d].copy_from_slice(part.row(r));
            }
        }
        let labels = per_head
            .iter()
            .map(|idx| idx.iter().map(|&i| self.data.labels[i]).collect())
            .collect();
        self.last_indices = per_head;
        Ok((x, Targets::Heads(labels)))
    }
}
