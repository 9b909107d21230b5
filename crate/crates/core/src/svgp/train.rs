//! Streaming training: a ring buffer of georeferenced beams, Monte Carlo
//! input resampling and an adaptive-moment ascent on the minibatch bound.

use nalgebra::{Matrix2, Vector2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::elbo::{elbo_minibatch, layout, pack_params, unpack_params, ElboValue};
use super::model::SvgpModel;
use crate::linalg::sqrt2_or_diag;
use crate::{Error, Result};

pub const DEFAULT_BUFFER_CAPACITY: usize = 200_000;
const MAX_RECOVERIES: u32 = 5;

/// One beam as stored for training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSample {
    pub input: [f64; 2],
    pub z: f64,
    pub omega: Matrix2<f64>,
}

/// Ring buffer holding the most recent beams.
#[derive(Debug, Clone)]
pub struct TrainBuffer {
    data: Vec<TrainSample>,
    capacity: usize,
    head: usize,
    total: u64,
}

impl TrainBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            data: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            head: 0,
            total: 0,
        }
    }

    pub fn push(&mut self, s: TrainSample) {
        if self.data.len() < self.capacity {
            self.data.push(s);
        } else {
            self.data[self.head] = s;
            self.head = (self.head + 1) % self.capacity;
        }
        self.total += 1;
    }

    pub fn extend(&mut self, it: impl IntoIterator<Item = TrainSample>) {
        for s in it {
            self.push(s);
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of samples ever pushed.
    pub fn total_pushed(&self) -> u64 {
        self.total
    }

    /// Contents in insertion order, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &TrainSample> {
        let (a, b) = self.data.split_at(self.head);
        b.iter().chain(a.iter())
    }

    /// `m` uniform draws; without replacement when the buffer is large enough.
    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Vec<TrainSample> {
        assert!(!self.is_empty(), "cannot sample an empty buffer");
        let n = self.data.len();
        if n <= m {
            (0..m).map(|_| self.data[rng.random_range(0..n)]).collect()
        } else {
            index::sample(rng, n, m).into_iter().map(|i| self.data[i]).collect()
        }
    }
}

/// Replaces each input by one draw from `N(input, omega)`.
pub fn sample_ui_batch<R: Rng + ?Sized>(batch: &[TrainSample], rng: &mut R) -> (Vec<[f64; 2]>, Vec<f64>) {
    let mut xs = Vec::with_capacity(batch.len());
    let mut zs = Vec::with_capacity(batch.len());
    for s in batch {
        let l = sqrt2_or_diag(&s.omega);
        let e = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        let d = l * e;
        xs.push([s.input[0] + d[0], s.input[1] + d[1]]);
        zs.push(s.z);
    }
    (xs, zs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub minibatch: usize,
    pub learning_rate: f64,
    /// Optimizer steps per received ping; fractional values accumulate.
    pub steps_per_ping: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub uncertain_inputs: bool,
    pub train_hyper: bool,
    pub train_inducing: bool,
    pub min_noise_variance: f64,
    pub buffer_capacity: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            minibatch: 1024,
            learning_rate: 1e-2,
            steps_per_ping: 1.0,
            seed: 0,
            optimizer: Optimizer::Adam,
            uncertain_inputs: true,
            train_hyper: true,
            train_inducing: true,
            min_noise_variance: 1e-6,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.minibatch == 0 {
            return Err(Error::InvalidConfig("minibatch size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning rate must be finite and >= 0".into()));
        }
        if !(self.steps_per_ping >= 0.0) {
            return Err(Error::InvalidConfig("steps per ping must be >= 0".into()));
        }
        if self.buffer_capacity == 0 {
            return Err(Error::InvalidConfig("buffer capacity must be >= 1".into()));
        }
        if !(self.min_noise_variance > 0.0) {
            return Err(Error::InvalidConfig("noise floor must be > 0".into()));
        }
        Ok(())
    }
}

/// Optimizer state. Batch selection and input resampling use separate
/// streams so that runs without input uncertainty stay reproducible.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    t: u64,
    lr_scale: f64,
    failures: u32,
    batch_rng: ChaCha8Rng,
    ui_rng: ChaCha8Rng,
    pending: f64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let batch_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let ui_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_1a7e_11u64);
        Ok(Self {
            cfg,
            first: Vec::new(),
            second: Vec::new(),
            t: 0,
            lr_scale: 1.0,
            failures: 0,
            batch_rng,
            ui_rng,
            pending: 0.0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Current learning rate after any failure-driven halving.
    pub fn effective_learning_rate(&self) -> f64 {
        self.cfg.learning_rate * self.lr_scale
    }

    /// Number of steps owed after one more ping, given the fractional rate.
    pub fn steps_for_ping(&mut self) -> usize {
        self.pending += self.cfg.steps_per_ping;
        let n = self.pending.floor();
        self.pending -= n;
        n as usize
    }

    /// One ascent step on a minibatch from `buffer`. Returns the bound at the
    /// pre-step parameters, or `None` when the step was rejected.
    pub fn train_step(&mut self, model: &mut SvgpModel, buffer: &TrainBuffer) -> Result<Option<ElboValue>> {
        if buffer.is_empty() {
            return Err(Error::Training("empty training buffer".into()));
        }
        let batch = buffer.sample(self.cfg.minibatch, &mut self.batch_rng);
        let (xs, zs) = if self.cfg.uncertain_inputs {
            sample_ui_batch(&batch, &mut self.ui_rng)
        } else {
            (batch.iter().map(|s| s.input).collect(), batch.iter().map(|s| s.z).collect())
        };
        let n_total = (model.n_seen.max(buffer.total_pushed()) as f64).max(buffer.len() as f64);

        let evaluated = elbo_minibatch(model, &xs, &zs, n_total);
        let (value, grad) = match evaluated {
            Ok((v, g)) if v.value.is_finite() => (v, g.pack()),
            Ok(_) | Err(Error::Numerical(_)) => return self.reject("non-finite bound"),
            Err(e) => return Err(e),
        };
        if grad.iter().any(|g| !g.is_finite()) {
            return self.reject("non-finite gradient");
        }

        let mut params = pack_params(model);
        let mut grad = grad;
        let lay = layout(model.num_inducing());
        if !self.cfg.train_inducing {
            grad[lay.inducing].fill(0.0);
        }
        if !self.cfg.train_hyper {
            grad[lay.hyper.clone()].fill(0.0);
        }
        let backup = params.clone();
        self.apply(&mut params, &grad);
        let floor = self.cfg.min_noise_variance.ln();
        let last = params.len() - 1;
        if params[last] < floor {
            params[last] = floor;
        }
        let mut candidate = model.clone();
        unpack_params(&mut candidate, &params);
        if params.iter().any(|p| !p.is_finite()) || candidate.kzz_cholesky().is_err() {
            unpack_params(model, &backup);
            return self.reject("step produced invalid parameters");
        }
        *model = candidate;
        self.failures = 0;
        Ok(Some(value))
    }

    /// Runs `n` steps, returning the last accepted bound.
    pub fn train_steps(&mut self, model: &mut SvgpModel, buffer: &TrainBuffer, n: usize) -> Result<Option<ElboValue>> {
        let mut last = None;
        for _ in 0..n {
            if let Some(v) = self.train_step(model, buffer)? {
                last = Some(v);
            }
        }
        Ok(last)
    }

    fn reject(&mut self, why: &str) -> Result<Option<ElboValue>> {
        self.failures += 1;
        if self.failures > MAX_RECOVERIES {
            return Err(Error::Training(format!("{why} after {MAX_RECOVERIES} learning-rate halvings")));
        }
        self.lr_scale *= 0.5;
        log::warn!("training step rejected ({why}); learning rate now {}", self.effective_learning_rate());
        Ok(None)
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        let lr = self.effective_learning_rate();
        self.t += 1;
        match self.cfg.optimizer {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p += lr * g;
                }
            }
            Optimizer::Adam => {
                if self.first.len() != params.len() {
                    self.first = vec![0.0; params.len()];
                    self.second = vec![0.0; params.len()];
                }
                let c1 = 1.0 - BETA1.powf(self.t as f64);
                let c2 = 1.0 - BETA2.powf(self.t as f64);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.first[i] = BETA1 * self.first[i] + (1.0 - BETA1) * g;
                    self.second[i] = BETA2 * self.second[i] + (1.0 - BETA2) * g * g;
                    let mh = self.first[i] / c1;
                    let vh = self.second[i] / c2;
                    params[i] += lr * mh / (vh.sqrt() + EPS);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svgp::kernel::KernelParams;

    fn sample(x: f64, y: f64, z: f64) -> TrainSample {
        TrainSample {
            input: [x, y],
            z,
            omega: Matrix2::zeros(),
        }
    }

    #[test]
    fn ring_keeps_most_recent() {
        let mut b = TrainBuffer::new(3);
        for i in 0..5 {
            b.push(sample(i as f64, 0.0, 0.0));
        }
        let xs: Vec<f64> = b.iter().map(|s| s.input[0]).collect();
        assert_eq!(xs, vec![2.0, 3.0, 4.0]);
        assert_eq!(b.total_pushed(), 5);
    }

    #[test]
    fn sampling_with_replacement_when_small() {
        let mut b = TrainBuffer::new(10);
        b.push(sample(1.0, 1.0, 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(b.sample(7, &mut rng).len(), 7);
    }

    #[test]
    fn zero_omega_leaves_inputs() {
        let batch = vec![sample(1.0, 2.0, 3.0), sample(-4.0, 5.0, 6.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (xs, zs) = sample_ui_batch(&batch, &mut rng);
        assert_eq!(xs, vec![[1.0, 2.0], [-4.0, 5.0]]);
        assert_eq!(zs, vec![3.0, 6.0]);
    }

    #[test]
    fn ui_draws_are_centred() {
        let sigma: f64 = 0.7;
        let s = TrainSample {
            input: [0.0, 0.0],
            z: 0.0,
            omega: Matrix2::from_diagonal(&Vector2::new(sigma * sigma, sigma * sigma)),
        };
        let n = 100_000;
        let batch = vec![s; n];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (xs, _) = sample_ui_batch(&batch, &mut rng);
        assert_eq!(xs.len(), n);
        let bound = 4.0 * sigma / (n as f64).sqrt();
        for axis in 0..2 {
            let mean = xs.iter().map(|x| x[axis]).sum::<f64>() / n as f64;
            assert!(mean.abs() < bound, "axis {axis}: {mean}");
        }
    }

    #[test]
    fn degenerate_omega_uses_diagonal_root() {
        let s = TrainSample {
            input: [0.0, 0.0],
            z: 0.0,
            omega: Matrix2::new(1.0, 1.0, 1.0, 1.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (xs, _) = sample_ui_batch(&[s], &mut rng);
        assert!(xs[0][0].is_finite() && xs[0][1].is_finite());
    }

    fn toy_buffer() -> TrainBuffer {
        let mut b = TrainBuffer::new(1000);
        for i in 0..40 {
            let x = i as f64 * 0.5;
            b.push(sample(x, 0.0, (x / 3.0).sin()));
        }
        b
    }

    fn toy_model() -> SvgpModel {
        let z: Vec<[f64; 2]> = (0..8).map(|i| [i as f64 * 2.5, 0.0]).collect();
        SvgpModel::new(z, KernelParams::new(1.0, 3.0).unwrap(), 0.1, 0.0).unwrap()
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let b = toy_buffer();
        let mut m = toy_model();
        let before = m.clone();
        let mut t = Trainer::new(TrainConfig {
            minibatch: 16,
            learning_rate: 0.0,
            ..TrainConfig::default()
        })
        .unwrap();
        t.train_steps(&mut m, &b, 5).unwrap();
        assert_eq!(pack_params(&m), pack_params(&before));
    }

    #[test]
    fn deterministic_without_input_noise() {
        let b = toy_buffer();
        let cfg = TrainConfig {
            minibatch: 16,
            seed: 9,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = toy_model();
            let mut t = Trainer::new(cfg.clone()).unwrap();
            t.train_steps(&mut m, &b, 30).unwrap();
            pack_params(&m)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn training_increases_bound() {
        let b = toy_buffer();
        let mut m = toy_model();
        let xs: Vec<[f64; 2]> = b.iter().map(|s| s.input).collect();
        let zs: Vec<f64> = b.iter().map(|s| s.z).collect();
        let before = super::super::elbo::elbo_value(&m, &xs, &zs, 40.0).unwrap().value;
        let mut t = Trainer::new(TrainConfig {
            minibatch: 40,
            learning_rate: 0.05,
            ..TrainConfig::default()
        })
        .unwrap();
        t.train_steps(&mut m, &b, 200).unwrap();
        let after = super::super::elbo::elbo_value(&m, &xs, &zs, 40.0).unwrap().value;
        assert!(after > before, "{before} -> {after}");
    }

    #[test]
    fn fractional_steps_accumulate() {
        let mut t = Trainer::new(TrainConfig {
            steps_per_ping: 0.25,
            ..TrainConfig::default()
        })
        .unwrap();
        let total: usize = (0..8).map(|_| t.steps_for_ping()).sum();
        assert_eq!(total, 2);
    }

    #[test]
    fn empty_buffer_is_an_error() {
        let mut m = toy_model();
        let mut t = Trainer::new(TrainConfig::default()).unwrap();
        assert!(t.train_step(&mut m, &TrainBuffer::new(4)).is_err());
    }
}
