//! Softmax cross-entropy training of a linear head, optionally jointly with
//! an embedding adapter, by minibatch SGD with momentum and step decay.
//!
//! Parameters live in one flat buffer laid out as
//! `[adapter params | W (K rows of d) | b (K)]`, so the optimizer and the
//! finite-difference checks see a single vector.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::AdapterKind;
use crate::error::{Error, Result};
use crate::linalg::dot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
}

impl TrainConfig {
    /// Settings for a standalone linear head.
    pub fn linear() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 256,
            momentum: 0.9,
            seed: 0,
            lr_decay_every: 50,
            lr_decay_factor: 0.5,
        }
    }

    /// Settings for first-session FiLM adaptation.
    pub fn film() -> Self {
        Self {
            learning_rate: 5e-3,
            epochs: 150,
            ..Self::linear()
        }
    }

    /// Settings for first-session full-matrix adaptation.
    pub fn full() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 200,
            ..Self::linear()
        }
    }

    pub fn for_adapter(kind: AdapterKind) -> Self {
        match kind {
            AdapterKind::Identity => Self::linear(),
            AdapterKind::Film => Self::film(),
            AdapterKind::Full => Self::full(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Zero learning rate and zero epochs are allowed; both leave the
    /// parameters at initialization.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate {} must be ≥ 0", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.lr_decay_every == 0 {
            return bad("lr_decay_every must be positive".into());
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad(format!(
                "lr_decay_factor {} outside (0, 1]",
                self.lr_decay_factor
            ));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.lr_decay_every) as i32;
        self.learning_rate * self.lr_decay_factor.powi(steps)
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::linear()
    }
}

/// Shape of the joint adapter + linear-head model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointObjective {
    pub adapter: AdapterKind,
    pub dim: usize,
    pub num_classes: usize,
}

impl JointObjective {
    pub fn new(adapter: AdapterKind, dim: usize, num_classes: usize) -> Self {
        Self {
            adapter,
            dim,
            num_classes,
        }
    }

    pub fn adapter_len(&self) -> usize {
        self.adapter.param_count(self.dim)
    }

    pub fn param_count(&self) -> usize {
        self.adapter_len() + self.num_classes * (self.dim + 1)
    }

    /// Identity adapter and an all-zero head.
    pub fn init_params(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.param_count()];
        let d = self.dim;
        match self.adapter {
            AdapterKind::Identity => {}
            AdapterKind::Film => p[..d].fill(1.0),
            AdapterKind::Full => {
                for i in 0..d {
                    p[i * d + i] = 1.0;
                }
            }
        }
        p
    }

    pub fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let (adapter, rest) = params.split_at(self.adapter_len());
        let (w, b) = rest.split_at(self.num_classes * self.dim);
        (adapter, w, b)
    }

    fn adapt_into(&self, adapter: &[f64], x: &[f64], z: &mut [f64]) {
        let d = self.dim;
        match self.adapter {
            AdapterKind::Identity => z.copy_from_slice(x),
            AdapterKind::Film => {
                let (gamma, beta) = adapter.split_at(d);
                for j in 0..d {
                    z[j] = gamma[j] * x[j] + beta[j];
                }
            }
            AdapterKind::Full => {
                let (m, c) = adapter.split_at(d * d);
                for i in 0..d {
                    z[i] = dot(&m[i * d..(i + 1) * d], x) + c[i];
                }
            }
        }
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, params: &[f64], xs: &[&[f64]], ys: &[usize]) -> f64 {
        self.evaluate(params, xs, ys, None)
    }

    /// Mean cross-entropy over the batch and its gradient.
    pub fn loss_and_grad(&self, params: &[f64], xs: &[&[f64]], ys: &[usize]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.param_count()];
        let loss = self.evaluate(params, xs, ys, Some(&mut grad));
        (loss, grad)
    }

    fn evaluate(
        &self,
        params: &[f64],
        xs: &[&[f64]],
        ys: &[usize],
        mut grad: Option<&mut [f64]>,
    ) -> f64 {
        assert_eq!(params.len(), self.param_count());
        assert_eq!(xs.len(), ys.len());
        if xs.is_empty() {
            return 0.0;
        }
        let d = self.dim;
        let k_count = self.num_classes;
        let n_adapt = self.adapter_len();
        let (adapter, w, b) = self.split(params);
        let mut z = vec![0.0; d];
        let mut logits = vec![0.0; k_count];
        let mut dz = vec![0.0; d];
        let mut total = 0.0;

        for (x, &y) in xs.iter().zip(ys) {
            self.adapt_into(adapter, x, &mut z);
            for k in 0..k_count {
                logits[k] = dot(&w[k * d..(k + 1) * d], &z) + b[k];
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            let log_norm = max + sum_exp.ln();
            total += log_norm - logits[y];

            let Some(g) = grad.as_deref_mut() else {
                continue;
            };
            let (g_adapt, g_rest) = g.split_at_mut(n_adapt);
            let (g_w, g_b) = g_rest.split_at_mut(k_count * d);
            dz.fill(0.0);
            for k in 0..k_count {
                let p = (logits[k] - log_norm).exp();
                let delta = if k == y { p - 1.0 } else { p };
                g_b[k] += delta;
                let wk = &w[k * d..(k + 1) * d];
                let gk = &mut g_w[k * d..(k + 1) * d];
                for j in 0..d {
                    gk[j] += delta * z[j];
                    dz[j] += delta * wk[j];
                }
            }
            match self.adapter {
                AdapterKind::Identity => {}
                AdapterKind::Film => {
                    let (g_gamma, g_beta) = g_adapt.split_at_mut(d);
                    for j in 0..d {
                        g_gamma[j] += dz[j] * x[j];
                        g_beta[j] += dz[j];
                    }
                }
                AdapterKind::Full => {
                    let (g_m, g_c) = g_adapt.split_at_mut(d * d);
                    for i in 0..d {
                        let row = &mut g_m[i * d..(i + 1) * d];
                        for j in 0..d {
                            row[j] += dz[i] * x[j];
                        }
                        g_c[i] += dz[i];
                    }
                }
            }
        }

        let inv = 1.0 / xs.len() as f64;
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v *= inv);
        }
        total * inv
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct Fit {
    pub params: Vec<f64>,
    /// Full-data loss before training followed by the loss after each epoch.
    pub losses: Vec<f64>,
}

impl Fit {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("initial loss always recorded")
    }
}

/// Minimizes the mean cross-entropy of `objective` over `(xs, ys)`.
/// Labels are dense indices `< objective.num_classes`.
pub fn fit(
    objective: &JointObjective,
    xs: &[&[f64]],
    ys: &[usize],
    cfg: &TrainConfig,
) -> Result<Fit> {
    cfg.validate()?;
    let mut params = objective.init_params();
    let mut velocity = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut batch_x: Vec<&[f64]> = Vec::with_capacity(cfg.batch_size);
    let mut batch_y: Vec<usize> = Vec::with_capacity(cfg.batch_size);

    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    losses.push(objective.loss(&params, xs, ys));

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.push(xs[i]);
                batch_y.push(ys[i]);
            }
            let (_, grad) = objective.loss_and_grad(&params, &batch_x, &batch_y);
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = cfg.momentum * *v + g;
                *p -= lr * *v;
            }
        }
        let loss = objective.loss(&params, xs, ys);
        if !loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }
        losses.push(loss);
    }
    Ok(Fit { params, losses })
}

/// Relative error `‖a - b‖ / max(‖a‖, ‖b‖, tiny)` used by gradient checks.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    diff / na.max(nb).max(1e-300)
}
