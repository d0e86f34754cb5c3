//! Reference mini-batch SGD on a one-hidden-layer perceptron, with logical
//! data-parallel workers that split each batch into equal shards.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Layer widths of the input → tanh hidden → softmax network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Mlp {
    pub fn param_count(&self) -> usize {
        self.hidden * self.input + self.hidden + self.output * self.hidden + self.output
    }

    // Offsets of W1, b1, W2, b2 in the flat vector.
    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.output * self.hidden;
        (b1, w2, b2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub dims: Mlp,
    /// W1 (hidden × input, row-major), b1, W2 (output × hidden), b2.
    pub w: Vec<f64>,
    pub t: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub dw: Vec<f64>,
}

impl ModelState {
    pub fn zeros(dims: Mlp) -> Self {
        ModelState { dims, w: vec![0.0; dims.param_count()], t: 0 }
    }

    /// Weights drawn from N(0, 1/fan_in), biases zero.
    pub fn init(dims: Mlp, rng: &mut ChaCha8Rng) -> Self {
        let mut m = Self::zeros(dims);
        let (b1, w2, b2) = dims.offsets();
        let n1 = Normal::new(0.0, 1.0 / (dims.input as f64).sqrt()).expect("valid std");
        let n2 = Normal::new(0.0, 1.0 / (dims.hidden as f64).sqrt()).expect("valid std");
        for w in &mut m.w[..b1] {
            *w = n1.sample(rng);
        }
        for w in &mut m.w[w2..b2] {
            *w = n2.sample(rng);
        }
        m
    }

    fn apply(&mut self, grad: &Gradient, step: f64) {
        for (w, g) in self.w.iter_mut().zip(&grad.dw) {
            *w -= step * g;
        }
        self.t += 1;
    }
}

/// Labelled samples stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub classes: usize,
    pub x: Vec<f64>,
    pub y: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    /// Splits off everything from sample `at` onward.
    pub fn split(mut self, at: usize) -> (Dataset, Dataset) {
        let at = at.min(self.len());
        let x = self.x.split_off(at * self.dim);
        let y = self.y.split_off(at);
        let rest = Dataset { dim: self.dim, classes: self.classes, x, y };
        (self, rest)
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.classes < 2 {
            return Err(Error::invariant("dataset", "need at least one feature and two classes"));
        }
        if self.x.len() != self.dim * self.y.len() {
            return Err(Error::invariant("dataset", "feature matrix does not match label count"));
        }
        if self.y.iter().any(|&c| c >= self.classes) {
            return Err(Error::invariant("dataset", "label out of range"));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invariant("dataset", "features must be finite"));
        }
        Ok(())
    }
}

/// Gaussian blobs: `classes` centers drawn with standard deviation
/// `separation`, unit-variance noise around them, labels assigned round-robin
/// so classes are balanced.
pub fn blobs(samples: usize, dim: usize, classes: usize, separation: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = Normal::new(0.0, separation).expect("valid std");
    let noise = Normal::new(0.0, 1.0).expect("valid std");
    let centers: Vec<f64> = (0..classes * dim).map(|_| spread.sample(&mut rng)).collect();
    let mut x = Vec::with_capacity(samples * dim);
    let mut y = Vec::with_capacity(samples);
    for i in 0..samples {
        let c = i % classes;
        x.extend(centers[c * dim..(c + 1) * dim].iter().map(|m| m + noise.sample(&mut rng)));
        y.push(c);
    }
    Dataset { dim, classes, x, y }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SgdConfig {
    /// Global batch B.
    pub batch: usize,
    pub workers: usize,
    /// Step size ε.
    pub step: f64,
    pub iterations: u64,
    pub seed: u64,
    pub hidden: usize,
}

impl SgdConfig {
    fn validate(&self, data: &Dataset) -> Result<()> {
        if self.batch == 0 || self.workers == 0 || self.batch % self.workers != 0 {
            return Err(Error::invariant(
                "sgd config",
                format!("{} workers must evenly split a batch of {}", self.workers, self.batch),
            ));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::invariant("sgd config", "step size must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::invariant("sgd config", "hidden width must be at least 1"));
        }
        if self.batch > data.len() {
            return Err(Error::invariant(
                "sgd config",
                format!("batch {} exceeds the {} available samples", self.batch, data.len()),
            ));
        }
        data.validate()
    }

    pub fn dims(&self, data: &Dataset) -> Mlp {
        Mlp { input: data.dim, hidden: self.hidden, output: data.classes }
    }
}

/// Mean cross-entropy over the samples `idx` and its gradient.
pub fn forward_backward(model: &ModelState, data: &Dataset, idx: &[usize]) -> Result<(f64, Gradient)> {
    if idx.is_empty() {
        return Err(Error::invariant("forward_backward", "batch is empty"));
    }
    let Mlp { input, hidden, output } = model.dims;
    if data.dim != input || data.classes != output {
        return Err(Error::invariant("forward_backward", "dataset does not match model dimensions"));
    }
    let (o_b1, o_w2, o_b2) = model.dims.offsets();
    let w = &model.w;
    let mut g = vec![0.0; w.len()];
    let mut h = vec![0.0; hidden];
    let mut z = vec![0.0; output];
    let mut dz = vec![0.0; output];
    let mut loss = 0.0;
    for &i in idx {
        let x = data.sample(i);
        for j in 0..hidden {
            let row = &w[j * input..(j + 1) * input];
            let a: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[o_b1 + j];
            h[j] = a.tanh();
        }
        for k in 0..output {
            let row = &w[o_w2 + k * hidden..o_w2 + (k + 1) * hidden];
            z[k] = row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() + w[o_b2 + k];
        }
        let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = zmax + z.iter().map(|v| (v - zmax).exp()).sum::<f64>().ln();
        loss += lse - z[data.y[i]];
        // dz = softmax - onehot, then back through W2 and tanh.
        for k in 0..output {
            dz[k] = (z[k] - lse).exp() - if k == data.y[i] { 1.0 } else { 0.0 };
            for j in 0..hidden {
                g[o_w2 + k * hidden + j] += dz[k] * h[j];
            }
            g[o_b2 + k] += dz[k];
        }
        for j in 0..hidden {
            let dh: f64 = (0..output).map(|k| w[o_w2 + k * hidden + j] * dz[k]).sum();
            let da = dh * (1.0 - h[j] * h[j]);
            for (gw, xv) in g[j * input..(j + 1) * input].iter_mut().zip(x) {
                *gw += da * xv;
            }
            g[o_b1 + j] += da;
        }
    }
    let count = idx.len() as f64;
    let loss = loss / count;
    if !loss.is_finite() {
        return Err(Error::Diverged { iteration: model.t, loss });
    }
    for v in &mut g {
        *v /= count;
    }
    Ok((loss, Gradient { dw: g }))
}

/// Mean of the gradients of `n` equal contiguous shards of `idx`, summed in
/// shard order.
pub fn shard_gradient(model: &ModelState, data: &Dataset, idx: &[usize], n: usize) -> Result<(f64, Gradient)> {
    if n == 0 || idx.len() % n != 0 {
        return Err(Error::invariant(
            "shard_gradient",
            format!("{n} shards do not evenly split {} samples", idx.len()),
        ));
    }
    let parts = idx
        .par_chunks(idx.len() / n)
        .map(|shard| forward_backward(model, data, shard))
        .collect::<Result<Vec<_>>>()?;
    let mut loss = 0.0;
    let mut dw = vec![0.0; model.w.len()];
    for (l, g) in &parts {
        loss += l;
        for (acc, v) in dw.iter_mut().zip(&g.dw) {
            *acc += v;
        }
    }
    let scale = n as f64;
    dw.iter_mut().for_each(|v| *v /= scale);
    Ok((loss / scale, Gradient { dw }))
}

/// w ← w − ε·Δw, advancing the iteration counter.
pub fn sgd_step(model: &ModelState, grad: &Gradient, step: f64) -> Result<ModelState> {
    if grad.dw.len() != model.w.len() {
        return Err(Error::invariant(
            "sgd_step",
            format!("gradient has {} entries, model has {}", grad.dw.len(), model.w.len()),
        ));
    }
    let mut next = model.clone();
    next.apply(grad, step);
    Ok(next)
}

/// Single-worker mini-batch SGD.
pub fn train(config: &SgdConfig, data: &Dataset) -> Result<ModelState> {
    parallel_train(&SgdConfig { workers: 1, ..*config }, data)
}

/// Mini-batch SGD with `config.workers` logical workers, each computing the
/// gradient of one shard of every batch; shard gradients are averaged in a
/// fixed order and applied once.
pub fn parallel_train(config: &SgdConfig, data: &Dataset) -> Result<ModelState> {
    config.validate(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = ModelState::init(config.dims(data), &mut rng);
    for _ in 0..config.iterations {
        let idx = index::sample(&mut rng, data.len(), config.batch).into_vec();
        let (_, grad) = if config.workers == 1 {
            forward_backward(&model, data, &idx)?
        } else {
            shard_gradient(&model, data, &idx, config.workers)?
        };
        model.apply(&grad, config.step);
    }
    Ok(model)
}

pub fn predict(model: &ModelState, x: &[f64]) -> usize {
    let Mlp { input, hidden, output } = model.dims;
    let (o_b1, o_w2, o_b2) = model.dims.offsets();
    let w = &model.w;
    let h: Vec<f64> = (0..hidden)
        .map(|j| (w[j * input..(j + 1) * input].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[o_b1 + j]).tanh())
        .collect();
    (0..output)
        .map(|k| w[o_w2 + k * hidden..o_w2 + (k + 1) * hidden].iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() + w[o_b2 + k])
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (k, v)| if v > best.1 { (k, v) } else { best })
        .0
}

pub fn accuracy(model: &ModelState, data: &Dataset) -> f64 {
    let hits = (0..data.len()).filter(|&i| predict(model, data.sample(i)) == data.y[i]).count();
    hits as f64 / data.len() as f64
}

pub fn mean_loss(model: &ModelState, data: &Dataset) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    // Loss only; the gradient is discarded.
    forward_backward(model, data, &idx).map(|(l, _)| l)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub k: u64,
    pub batch: usize,
    pub step: f64,
    pub iterations: u64,
    /// `None` when the run diverged.
    pub train_loss: Option<f64>,
    pub validation_accuracy: Option<f64>,
    pub diverged_at: Option<u64>,
}

/// Runs the (kB, kε, T/k) family for each factor and reports validation
/// accuracy; a divergent run becomes a row, not an error.
pub fn batch_step_sweep(
    train_set: &Dataset,
    validation: &Dataset,
    base: &SgdConfig,
    factors: &[u64],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(factors.len());
    for &k in factors {
        if k == 0 || base.iterations % k != 0 {
            return Err(Error::invariant(
                format!("k = {k}"),
                format!("must be >= 1 and divide the {} base iterations", base.iterations),
            ));
        }
        let cfg = SgdConfig {
            batch: base.batch * k as usize,
            step: base.step * k as f64,
            iterations: base.iterations / k,
            ..*base
        };
        let row = match parallel_train(&cfg, train_set) {
            Ok(model) => SweepRow {
                k,
                batch: cfg.batch,
                step: cfg.step,
                iterations: cfg.iterations,
                train_loss: mean_loss(&model, train_set).ok(),
                validation_accuracy: Some(accuracy(&model, validation)),
                diverged_at: None,
            },
            Err(Error::Diverged { iteration, .. }) => SweepRow {
                k,
                batch: cfg.batch,
                step: cfg.step,
                iterations: cfg.iterations,
                train_loss: None,
                validation_accuracy: None,
                diverged_at: Some(iteration),
            },
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    Ok(rows)
}
