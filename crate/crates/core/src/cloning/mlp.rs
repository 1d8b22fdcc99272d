//! One-hidden-layer tanh network trained with seeded mini-batch Adam on
//! standardized inputs and targets.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Hyperparameters;
use crate::rng::{self, tag};
use crate::{Error, Result};

/// Serialized network. Matrices are row-major; input-side arrays span the
/// full stacked-frame width with zeros at masked positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpWeights {
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub hidden_weights: Vec<Vec<f64>>,
    pub hidden_bias: Vec<f64>,
    pub output_weights: Vec<Vec<f64>>,
    pub output_bias: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_scale: Vec<f64>,
}

impl MlpWeights {
    pub fn input_width(&self) -> usize {
        self.input_mean.len()
    }

    pub fn forward(&self, active: &[usize], input: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = active
            .iter()
            .zip(input)
            .map(|(&k, v)| (v - self.input_mean[k]) / self.input_scale[k])
            .collect();
        let h: Vec<f64> = self
            .hidden_weights
            .iter()
            .zip(&self.hidden_bias)
            .map(|(row, b)| (b + active.iter().zip(&z).map(|(&k, v)| row[k] * v).sum::<f64>()).tanh())
            .collect();
        self.output_weights
            .iter()
            .zip(&self.output_bias)
            .zip(self.output_mean.iter().zip(&self.output_scale))
            .map(|((row, b), (m, s))| m + s * (b + row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>()))
            .collect()
    }
}

/// Network parameters over the active (unmasked) inputs only.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Net {
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl Net {
    fn zeros_like(&self) -> Net {
        Net {
            w1: DMatrix::zeros(self.w1.nrows(), self.w1.ncols()),
            b1: DVector::zeros(self.b1.len()),
            w2: DMatrix::zeros(self.w2.nrows(), self.w2.ncols()),
            b2: DVector::zeros(self.b2.len()),
        }
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.w1.iter().chain(self.b1.iter()).chain(self.w2.iter()).chain(self.b2.iter())
    }

    fn predict(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut h = x * self.w1.transpose();
        for mut row in h.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(self.b1.iter()) {
                *v = (*v + b).tanh();
            }
        }
        let mut y = &h * self.w2.transpose();
        for mut row in y.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(self.b2.iter()) {
                *v += b;
            }
        }
        (h, y)
    }

    /// Mean over rows of the squared error summed over outputs, and its
    /// gradient.
    pub fn loss_and_grad(&self, x: &DMatrix<f64>, t: &DMatrix<f64>) -> (f64, Net) {
        let n = x.nrows() as f64;
        let (h, y) = self.predict(x);
        let r = y - t;
        let loss = r.norm_squared() / n;
        let dy = r * (2.0 / n);
        let w2 = dy.transpose() * &h;
        let b2 = DVector::from_iterator(dy.ncols(), dy.column_iter().map(|c| c.sum()));
        let mut dh = &dy * &self.w2;
        dh.zip_apply(&h, |g, hv| *g *= 1.0 - hv * hv);
        let w1 = dh.transpose() * x;
        let b1 = DVector::from_iterator(dh.ncols(), dh.column_iter().map(|c| c.sum()));
        (loss, Net { w1, b1, w2, b2 })
    }

    pub fn random(inputs: usize, hidden: usize, outputs: usize, seed: u64) -> Net {
        let mut rng = rng::stream(seed, &[tag::TRAIN, 0]);
        let n1 = Normal::new(0.0, 1.0 / (inputs.max(1) as f64).sqrt()).expect("positive sd");
        let n2 = Normal::new(0.0, 1.0 / (hidden as f64).sqrt()).expect("positive sd");
        Net {
            w1: DMatrix::from_fn(hidden, inputs, |_, _| n1.sample(&mut rng)),
            b1: DVector::zeros(hidden),
            w2: DMatrix::from_fn(outputs, hidden, |_, _| n2.sample(&mut rng)),
            b2: DVector::zeros(outputs),
        }
    }
}

fn column_stats(m: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = m.nrows() as f64;
    m.column_iter()
        .map(|c| {
            let mean = c.sum() / n;
            let var = c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            // constant columns keep unit scale
            (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
        })
        .unzip()
}

fn standardize(m: &DMatrix<f64>, mean: &[f64], scale: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| (m[(i, j)] - mean[j]) / scale[j])
}

fn rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

pub(crate) fn fit(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    hp: &Hyperparameters,
    active: &[usize],
    width: usize,
) -> Result<MlpWeights> {
    let Hyperparameters::Mlp { hidden, epochs, learning_rate, batch_size, rng_seed } = *hp else {
        return Err(Error::InvalidConfig("expected MLP hyperparameters".into()));
    };
    let (x_mean, x_scale) = column_stats(x);
    let (y_mean, y_scale) = column_stats(y);
    let xs = standardize(x, &x_mean, &x_scale);
    let ys = standardize(y, &y_mean, &y_scale);

    let mut net = Net::random(x.ncols(), hidden, y.ncols(), rng_seed);
    let mut m = net.zeros_like();
    let mut v = net.zeros_like();
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut step = 0i32;
    for epoch in 0..epochs {
        let mut rng = rng::stream(rng_seed, &[tag::TRAIN, 1, epoch as u64]);
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            let (_, g) = net.loss_and_grad(&rows(&xs, batch), &rows(&ys, batch));
            step += 1;
            let c1 = 1.0 - BETA1.powi(step);
            let c2 = 1.0 - BETA2.powi(step);
            for (((p, gi), mi), vi) in net
                .params_mut()
                .zip(g.params())
                .zip(m.params_mut())
                .zip(v.params_mut())
            {
                *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                *p -= learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
            }
        }
    }
    if net.params().any(|p| !p.is_finite()) {
        return Err(Error::InvalidConfig("MLP training diverged; lower the learning rate".into()));
    }

    let spread = |values: &[f64], fill: f64| {
        let mut full = vec![fill; width];
        for (&k, &v) in active.iter().zip(values) {
            full[k] = v;
        }
        full
    };
    Ok(MlpWeights {
        input_mean: spread(&x_mean, 0.0),
        input_scale: spread(&x_scale, 1.0),
        hidden_weights: net
            .w1
            .row_iter()
            .map(|r| spread(&r.iter().copied().collect::<Vec<_>>(), 0.0))
            .collect(),
        hidden_bias: net.b1.iter().copied().collect(),
        output_weights: net.w2.row_iter().map(|r| r.iter().copied().collect()).collect(),
        output_bias: net.b2.iter().copied().collect(),
        output_mean: y_mean,
        output_scale: y_scale,
    })
}
