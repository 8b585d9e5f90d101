//! The 100-90-10 feed-forward network: tanh hidden layer, softmax output,
//! ternary weights backed by real-valued shadow weights.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const INPUTS: usize = 100;
pub const HIDDEN: usize = 90;
pub const OUTPUTS: usize = 10;

/// Rows per chunk when evaluating a whole dataset.
pub(crate) const EVAL_CHUNK: usize = 2_000;

/// Real-valued network parameters. `w1` is `INPUTS × HIDDEN`, `w2` is
/// `HIDDEN × OUTPUTS`; layer outputs are `x · w + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Shadow weights updated by SGD.
pub type RealSolution = Params;
/// Loss gradients, shaped like [`Params`].
pub type Gradients = Params;

impl Params {
    pub fn zeros() -> Self {
        Self::zeros_with(INPUTS, HIDDEN, OUTPUTS)
    }

    /// Arbitrary layer sizes; used for small test networks.
    pub fn zeros_with(inputs: usize, hidden: usize, outputs: usize) -> Self {
        Self {
            w1: Array2::zeros((inputs, hidden)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, outputs)),
            b2: Array1::zeros(outputs),
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.b1, &self.b2].iter().all(|v| v.iter().all(|x| x.is_finite()))
            && [&self.w1, &self.w2].iter().all(|m| m.iter().all(|x| x.is_finite()))
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (i, h) = self.w1.dim();
        let (h2, o) = self.w2.dim();
        if h != h2 || self.b1.len() != h || self.b2.len() != o || i == 0 || o == 0 {
            return Err(Error::Contract(format!(
                "inconsistent parameter shapes: w1 {:?}, b1 {}, w2 {:?}, b2 {}",
                self.w1.dim(),
                self.b1.len(),
                self.w2.dim(),
                self.b2.len()
            )));
        }
        Ok(())
    }
}

/// Trained network as stored on a crossbar: ternary weights, real biases.
#[derive(Clone, Debug, PartialEq)]
pub struct TernarySolution {
    pub w1: Array2<i8>,
    pub b1: Array1<f64>,
    pub w2: Array2<i8>,
    pub b2: Array1<f64>,
}

impl TernarySolution {
    pub fn from_real(real: &RealSolution, threshold: f64) -> Self {
        Self {
            w1: ternarize(&real.w1, threshold),
            b1: real.b1.clone(),
            w2: ternarize(&real.w2, threshold),
            b2: real.b2.clone(),
        }
    }

    /// The same network with weights widened to `f64`.
    pub fn to_params(&self) -> Params {
        Params {
            w1: self.w1.mapv(f64::from),
            b1: self.b1.clone(),
            w2: self.w2.mapv(f64::from),
            b2: self.b2.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w1.dim() != (INPUTS, HIDDEN) || self.w2.dim() != (HIDDEN, OUTPUTS) {
            return Err(Error::Contract(format!(
                "solution weights must be {INPUTS}x{HIDDEN} and {HIDDEN}x{OUTPUTS}, got {:?} and {:?}",
                self.w1.dim(),
                self.w2.dim()
            )));
        }
        if self.b1.len() != HIDDEN || self.b2.len() != OUTPUTS {
            return Err(Error::Contract("bias lengths must be 90 and 10".into()));
        }
        if self.w1.iter().chain(self.w2.iter()).any(|&w| !(-1..=1).contains(&w)) {
            return Err(Error::Contract("weights must lie in {-1, 0, +1}".into()));
        }
        if !self.b1.iter().chain(self.b2.iter()).all(|b| b.is_finite()) {
            return Err(Error::Contract("biases must be finite".into()));
        }
        Ok(())
    }
}

/// How gradients with respect to quantized weights reach the shadow weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Estimator {
    /// Identity pass-through.
    #[default]
    Identity,
    /// Pass-through only where `|w| <= limit`; zero elsewhere.
    Clipped { limit: f64 },
}

impl Estimator {
    pub fn apply(&self, real: &Array2<f64>, grad: &mut Array2<f64>) {
        if let Estimator::Clipped { limit } = *self {
            Zip::from(grad).and(real).for_each(|g, &w| {
                if w.abs() > limit {
                    *g = 0.0;
                }
            });
        }
    }
}

/// Entries ~ `N(0, 2 / (rows + cols))`.
pub fn xavier_init<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Result<Array2<f64>> {
    if rows == 0 || cols == 0 {
        return Err(Error::Domain(format!(
            "xavier_init needs positive dimensions, got {rows}x{cols}"
        )));
    }
    let std = (2.0 / (rows + cols) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    Ok(Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng)))
}

/// +1 above `threshold`, -1 below `-threshold`, 0 otherwise (ties go to 0).
pub fn ternarize_value(v: f64, threshold: f64) -> i8 {
    if v > threshold {
        1
    } else if v < -threshold {
        -1
    } else {
        0
    }
}

pub fn ternarize(real: &Array2<f64>, threshold: f64) -> Array2<i8> {
    real.mapv(|v| ternarize_value(v, threshold))
}

/// Intermediate values of one forward pass over a batch (one row per item).
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub inputs: Array2<f64>,
    pub z: Array2<f64>,
    pub a: Array2<f64>,
    pub scores: Array2<f64>,
    pub probs: Array2<f64>,
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut p = scores.clone();
    for mut row in p.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}

/// Per-row `-log softmax(scores)[target]`, via log-sum-exp.
pub(crate) fn row_losses(scores: &Array2<f64>, targets: ArrayView2<f64>) -> Array1<f64> {
    Zip::from(scores.rows())
        .and(targets.rows())
        .map_collect(|s, t| {
            let max = s.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + s.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            lse - s.dot(&t)
        })
}

pub fn forward(params: &Params, x: ArrayView2<f64>) -> ForwardCache {
    let z = x.dot(&params.w1) + &params.b1;
    let a = z.mapv(f64::tanh);
    let scores = a.dot(&params.w2) + &params.b2;
    let probs = softmax_rows(&scores);
    ForwardCache {
        inputs: x.to_owned(),
        z,
        a,
        scores,
        probs,
    }
}

/// Mean cross-entropy over the batch.
pub fn cross_entropy_loss(cache: &ForwardCache, targets: ArrayView2<f64>) -> f64 {
    row_losses(&cache.scores, targets).mean().unwrap_or(0.0)
}

/// Backpropagation of the mean cross-entropy. Weight gradients are taken
/// with respect to the weights `params` used in the forward pass; with
/// ternary `params` they are the straight-through gradients for the
/// shadow weights.
pub fn backward(params: &Params, cache: &ForwardCache, targets: ArrayView2<f64>) -> Gradients {
    let n = cache.inputs.nrows() as f64;
    let d_scores = (&cache.probs - &targets) / n;
    let d_z = hidden_delta(params, &cache.a, &d_scores);
    Gradients {
        w1: cache.inputs.t().dot(&d_z),
        b1: d_z.sum_axis(Axis(0)),
        w2: cache.a.t().dot(&d_scores),
        b2: d_scores.sum_axis(Axis(0)),
    }
}

/// `dL/dz` given `dL/dscores`.
pub(crate) fn hidden_delta(params: &Params, a: &Array2<f64>, d_scores: &Array2<f64>) -> Array2<f64> {
    let mut d_z = d_scores.dot(&params.w2.t());
    Zip::from(&mut d_z).and(a).for_each(|d, &a| *d *= 1.0 - a * a);
    d_z
}

/// `real -= lr * grads`, in place.
pub fn sgd_step(real: &mut RealSolution, grads: &Gradients, lr: f64) {
    real.w1.scaled_add(-lr, &grads.w1);
    real.b1.scaled_add(-lr, &grads.b1);
    real.w2.scaled_add(-lr, &grads.w2);
    real.b2.scaled_add(-lr, &grads.b2);
}

/// Index of the largest score per row; ties go to the lowest index.
pub fn predict(params: &Params, x: ArrayView2<f64>) -> Vec<usize> {
    let z = x.dot(&params.w1) + &params.b1;
    let a = z.mapv(f64::tanh);
    let scores = a.dot(&params.w2) + &params.b2;
    scores
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (k, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Fraction of misclassified items.
pub fn classification_error(params: &Params, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut wrong = 0usize;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let x = data.images.slice(ndarray::s![start..end, ..]);
        let pred = predict(params, x);
        wrong += pred
            .iter()
            .zip(&data.labels[start..end])
            .filter(|(&p, &l)| p != usize::from(l))
            .count();
    }
    Ok(wrong as f64 / data.len() as f64)
}

/// Mean cross-entropy over a whole dataset.
pub fn dataset_loss(params: &Params, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let idx: Vec<usize> = (start..end).collect();
        let cache = forward(params, data.images.slice(ndarray::s![start..end, ..]));
        total += row_losses(&cache.scores, data.one_hot(&idx).view()).sum();
    }
    Ok(total / data.len() as f64)
}
