//! Isotonic promotion network.
//!
//! Two sub-networks share only their inputs:
//!
//! * the **bias net** sums per-feature embeddings, passes them through an
//!   optional ReLU tower and a one-unit affine layer with leaky-ReLU
//!   activation, and adds a global bias. The result `logit0(x)` is the
//!   logit of the response at the lowest grid level `d_0`.
//! * the **uplift net** sums its own embeddings, runs its own tower to get
//!   `t(x)`, and produces one weight per grid step:
//!   `w_j = relu(A_j . t + beta_j * p0 + gamma_j * w_{j-1} + c_j)` for
//!   `j = 1..D-1`, with `w_0 = 0` and `p0 = sigmoid(logit0)`.
//!
//! The response at level `k` is `sigmoid(logit0 + sum_{j<=k} w_j)`, i.e. the
//! isotonic embedding `e(c)` dotted with the nonnegative weight vector. The
//! curve is nondecreasing for any parameter values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{log_loss, log_loss_dlogit, smoothness_grad, smoothness_loss};
use super::nn::{
    check_features, dot, embedding_tables, leaky_relu, sigmoid, sum_embeddings, tower_backward, tower_forward,
    Dense, Tensor, TowerTrace,
};
use super::{IncentiveGrid, Point, ResponseModel};
use crate::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DipnArch {
    pub embed_dim: usize,
    /// Widths of the ReLU layers between summed embeddings and each head.
    pub hidden: Vec<usize>,
}

impl Default for DipnArch {
    fn default() -> Self {
        Self {
            embed_dim: 8,
            hidden: vec![16],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DipnModel {
    pub grid: IncentiveGrid,
    pub vocab: Vec<usize>,
    pub arch: DipnArch,
    pub leaky_slope: f64,
    pub bias_embed: Vec<Tensor>,
    pub bias_hidden: Vec<Dense>,
    pub bias_out: Dense,
    pub global_bias: Tensor,
    pub uplift_embed: Vec<Tensor>,
    pub uplift_hidden: Vec<Dense>,
    /// `[D-1, H+2]`: columns `0..H` read `t`, column `H` reads `p0`,
    /// column `H+1` reads the previous uplift weight.
    pub uplift_head: Dense,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    bias_tower: TowerTrace,
    bias_feat: Vec<f64>,
    bias_pre: f64,
    logit0: f64,
    p0: f64,
    uplift_tower: TowerTrace,
    t: Vec<f64>,
    pre: Vec<f64>,
    w: Vec<f64>,
}

fn tower(prefix: &str, input: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> (Vec<Dense>, usize) {
    let mut layers = Vec::new();
    let mut width = input;
    for (l, &h) in hidden.iter().enumerate() {
        layers.push(Dense::init(&format!("{prefix}.hidden{l}"), width, h, width, 1.0, rng));
        width = h;
    }
    (layers, width)
}

impl DipnModel {
    /// All-zero parameters; used as the template when loading.
    pub fn zeros(grid: IncentiveGrid, vocab: Vec<usize>, arch: DipnArch) -> Result<Self> {
        let mut m = Self::new(grid, vocab, arch, 0)?;
        for t in m.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(m)
    }

    pub fn new(grid: IncentiveGrid, vocab: Vec<usize>, arch: DipnArch, seed: u64) -> Result<Self> {
        if vocab.is_empty() || vocab.len() > 3 || vocab.iter().any(|&v| v == 0) {
            return Err(Error::invalid(format!("unsupported vocabulary {vocab:?}")));
        }
        if arch.embed_dim == 0 || arch.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = arch.embed_dim;
        let bias_embed = embedding_tables("bias", &vocab, e, 0.5, &mut rng);
        let (bias_hidden, hb) = tower("bias", e, &arch.hidden, &mut rng);
        let bias_out = Dense::init("bias.out", hb, 1, hb + 1, 1.0, &mut rng);
        let global_bias = Tensor::zeros("bias.global", vec![1]);

        let uplift_embed = embedding_tables("uplift", &vocab, e, 0.5, &mut rng);
        let (uplift_hidden, hu) = tower("uplift", e, &arch.hidden, &mut rng);
        let steps = grid.len() - 1;
        let mut uplift_head = Dense::init("uplift.head", hu + 2, steps, hu + 2, 0.1, &mut rng);
        // Start every uplift unit in its active region.
        uplift_head.bias.data.iter_mut().for_each(|b| *b = 0.1);

        Ok(Self {
            grid,
            vocab,
            arch,
            leaky_slope: LEAKY_SLOPE,
            bias_embed,
            bias_hidden,
            bias_out,
            global_bias,
            uplift_embed,
            uplift_hidden,
            uplift_head,
        })
    }

    /// Parameters in a fixed order: the bias net's tensors come first.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.bias_embed.iter().collect();
        for d in &self.bias_hidden {
            v.push(&d.weight);
            v.push(&d.bias);
        }
        v.push(&self.bias_out.weight);
        v.push(&self.bias_out.bias);
        v.push(&self.global_bias);
        v.extend(self.uplift_embed.iter());
        for d in &self.uplift_hidden {
            v.push(&d.weight);
            v.push(&d.bias);
        }
        v.push(&self.uplift_head.weight);
        v.push(&self.uplift_head.bias);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.bias_embed.iter_mut().collect();
        for d in &mut self.bias_hidden {
            v.push(&mut d.weight);
            v.push(&mut d.bias);
        }
        v.push(&mut self.bias_out.weight);
        v.push(&mut self.bias_out.bias);
        v.push(&mut self.global_bias);
        v.extend(self.uplift_embed.iter_mut());
        for d in &mut self.uplift_hidden {
            v.push(&mut d.weight);
            v.push(&mut d.bias);
        }
        v.push(&mut self.uplift_head.weight);
        v.push(&mut self.uplift_head.bias);
        v
    }

    /// How many leading entries of [`Self::tensors`] belong to the bias net.
    pub fn bias_tensor_count(&self) -> usize {
        self.bias_embed.len() + 2 * self.bias_hidden.len() + 3
    }

    pub(crate) fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        for t in g.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        g
    }

    pub(crate) fn into_tensors(self) -> Vec<Tensor> {
        let mut v = self.bias_embed;
        for d in self.bias_hidden {
            v.push(d.weight);
            v.push(d.bias);
        }
        v.push(self.bias_out.weight);
        v.push(self.bias_out.bias);
        v.push(self.global_bias);
        v.extend(self.uplift_embed);
        for d in self.uplift_hidden {
            v.push(d.weight);
            v.push(d.bias);
        }
        v.push(self.uplift_head.weight);
        v.push(self.uplift_head.bias);
        v
    }

    pub(crate) fn forward(&self, x: &[usize]) -> Trace {
        let (bias_feat, bias_tower) = tower_forward(&self.bias_hidden, sum_embeddings(&self.bias_embed, x));
        let bias_pre = self.bias_out.forward(&bias_feat)[0];
        let logit0 = leaky_relu(bias_pre, self.leaky_slope) + self.global_bias.data[0];
        let p0 = sigmoid(logit0);

        let (t, uplift_tower) = tower_forward(&self.uplift_hidden, sum_embeddings(&self.uplift_embed, x));
        let h = t.len();
        let steps = self.grid.len() - 1;
        let mut pre = Vec::with_capacity(steps);
        let mut w = Vec::with_capacity(steps);
        let mut prev = 0.0;
        for j in 0..steps {
            let row = self.uplift_head.weight.row(j);
            let a = dot(&row[..h], &t) + row[h] * p0 + row[h + 1] * prev + self.uplift_head.bias.data[j];
            prev = if a > 0.0 { a } else { 0.0 };
            pre.push(a);
            w.push(prev);
        }
        Trace {
            bias_tower,
            bias_feat,
            bias_pre,
            logit0,
            p0,
            uplift_tower,
            t,
            pre,
            w,
        }
    }

    pub(crate) fn backward(&self, tr: &Trace, x: &[usize], level: usize, dz: f64, smooth: (f64, f64), grad: &mut Self) {
        let steps = self.grid.len() - 1;
        let h = tr.t.len();
        let mut dw = vec![0.0; steps];
        if dz != 0.0 {
            dw[..level].iter_mut().for_each(|d| *d = dz);
        }
        smoothness_grad(&tr.w, smooth.1, smooth.0, &mut dw);

        let mut dp0 = 0.0;
        let mut dt = vec![0.0; h];
        for j in (0..steps).rev() {
            let da = if tr.pre[j] > 0.0 { dw[j] } else { 0.0 };
            if da == 0.0 {
                continue;
            }
            let prev = if j > 0 { tr.w[j - 1] } else { 0.0 };
            let row = self.uplift_head.weight.row(j);
            grad.uplift_head.bias.data[j] += da;
            let grow = grad.uplift_head.weight.row_mut(j);
            for k in 0..h {
                grow[k] += da * tr.t[k];
                dt[k] += da * row[k];
            }
            grow[h] += da * tr.p0;
            grow[h + 1] += da * prev;
            dp0 += da * row[h];
            if j > 0 {
                dw[j - 1] += da * row[h + 1];
            }
        }
        if dt.iter().any(|&v| v != 0.0) {
            let ds = tower_backward(&self.uplift_hidden, &mut grad.uplift_hidden, &tr.uplift_tower, dt);
            for (g, &v) in grad.uplift_embed.iter_mut().zip(x) {
                super::nn::axpy(1.0, &ds, g.row_mut(v));
            }
        }

        let dlogit0 = dz + dp0 * tr.p0 * (1.0 - tr.p0);
        if dlogit0 == 0.0 {
            return;
        }
        grad.global_bias.data[0] += dlogit0;
        let dpre = dlogit0 * if tr.bias_pre > 0.0 { 1.0 } else { self.leaky_slope };
        let dfeat = self.bias_out.backward(&mut grad.bias_out, &tr.bias_feat, &[dpre]);
        let ds = tower_backward(&self.bias_hidden, &mut grad.bias_hidden, &tr.bias_tower, dfeat);
        for (g, &v) in grad.bias_embed.iter_mut().zip(x) {
            super::nn::axpy(1.0, &ds, g.row_mut(v));
        }
    }

    /// Nonnegative uplift weights `w_1..w_{D-1}` for a user.
    pub fn uplift_weights(&self, x: &[usize]) -> Result<Vec<f64>> {
        check_features(x, &self.vocab)?;
        Ok(self.forward(x).w)
    }

    /// Logit at the lowest level, i.e. the bias net's output.
    pub fn bias_logit(&self, x: &[usize]) -> Result<f64> {
        check_features(x, &self.vocab)?;
        Ok(self.forward(x).logit0)
    }

    /// `1/M sum_i (weight_i * log_loss_i + alpha * smoothness_loss(w(x_i)))`
    /// and its gradient with respect to every tensor. `eps` is the
    /// smoothness denominator floor.
    pub fn loss_and_grad(&self, batch: &[Point], alpha: f64, eps: f64) -> (f64, Vec<Tensor>) {
        let mut grad = self.zeros_like();
        let m = batch.len().max(1) as f64;
        let mut loss = 0.0;
        for p in batch {
            let x = &p.features[..self.vocab.len()];
            let tr = self.forward(x);
            let z = tr.logit0 + tr.w[..p.level].iter().sum::<f64>();
            let prob = sigmoid(z);
            let smooth = if alpha != 0.0 { smoothness_loss(&tr.w, eps) } else { 0.0 };
            loss += log_loss(prob, p.label, p.weight) + alpha * smooth;
            let dz = log_loss_dlogit(prob, p.label, p.weight) / m;
            self.backward(&tr, x, p.level, dz, (alpha / m, eps), &mut grad);
        }
        (loss / m, grad.into_tensors())
    }

    pub fn total_loss(&self, batch: &[Point], alpha: f64, eps: f64) -> f64 {
        let m = batch.len().max(1) as f64;
        batch
            .iter()
            .map(|p| {
                let tr = self.forward(&p.features[..self.vocab.len()]);
                let z = tr.logit0 + tr.w[..p.level].iter().sum::<f64>();
                let smooth = if alpha != 0.0 { smoothness_loss(&tr.w, eps) } else { 0.0 };
                log_loss(sigmoid(z), p.label, p.weight) + alpha * smooth
            })
            .sum::<f64>()
            / m
    }
}

impl ResponseModel for DipnModel {
    fn grid(&self) -> &IncentiveGrid {
        &self.grid
    }

    fn vocab(&self) -> &[usize] {
        &self.vocab
    }

    fn predict_level(&self, x: &[usize], level: usize) -> Result<f64> {
        check_features(x, &self.vocab)?;
        if level >= self.grid.len() {
            return Err(Error::invalid(format!("level {level} outside grid of {}", self.grid.len())));
        }
        let tr = self.forward(x);
        let mut z = tr.logit0;
        for &w in &tr.w[..level] {
            z += w;
        }
        Ok(sigmoid(z))
    }

    fn predict(&self, x: &[usize], c: f64) -> Result<f64> {
        check_features(x, &self.vocab)?;
        let e = self.grid.isotonic_embed(c)?;
        let tr = self.forward(x);
        // Digit 0 always fires and is carried by the bias net.
        let mut z = tr.logit0;
        for (&w, &bit) in tr.w.iter().zip(&e.bits[1..]) {
            if bit == 1 {
                z += w;
            }
        }
        Ok(sigmoid(z))
    }

    fn predict_curve(&self, x: &[usize]) -> Result<Vec<f64>> {
        check_features(x, &self.vocab)?;
        let tr = self.forward(x);
        let mut z = tr.logit0;
        let mut curve = Vec::with_capacity(self.grid.len());
        curve.push(sigmoid(z));
        for &w in &tr.w {
            z += w;
            curve.push(sigmoid(z));
        }
        Ok(curve)
    }
}
