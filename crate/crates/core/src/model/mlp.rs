//! Unconstrained feed-forward baseline.
//!
//! Input is the concatenation of one embedding per feature and a one-hot
//! vector of the grid level, followed by ReLU layers and a single logit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{log_loss, log_loss_dlogit};
use super::nn::{check_features, embedding_tables, sigmoid, tower_backward, tower_forward, Dense, Tensor, TowerTrace};
use super::{IncentiveGrid, Point, ResponseModel};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpArch {
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for MlpArch {
    fn default() -> Self {
        Self {
            embed_dim: 8,
            hidden: vec![32, 16],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub grid: IncentiveGrid,
    pub vocab: Vec<usize>,
    pub arch: MlpArch,
    pub embed: Vec<Tensor>,
    pub hidden: Vec<Dense>,
    pub out: Dense,
}

struct Trace {
    tower: TowerTrace,
    feat: Vec<f64>,
    logit: f64,
}

impl MlpModel {
    pub fn zeros(grid: IncentiveGrid, vocab: Vec<usize>, arch: MlpArch) -> Result<Self> {
        let mut m = Self::new(grid, vocab, arch, 0)?;
        for t in m.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(m)
    }

    pub fn new(grid: IncentiveGrid, vocab: Vec<usize>, arch: MlpArch, seed: u64) -> Result<Self> {
        if vocab.is_empty() || vocab.len() > 3 || vocab.iter().any(|&v| v == 0) {
            return Err(Error::invalid(format!("unsupported vocabulary {vocab:?}")));
        }
        if arch.embed_dim == 0 || arch.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed = embedding_tables("mlp", &vocab, arch.embed_dim, 0.5, &mut rng);
        let mut width = vocab.len() * arch.embed_dim + grid.len();
        let mut hidden = Vec::new();
        for (l, &h) in arch.hidden.iter().enumerate() {
            hidden.push(Dense::init(&format!("mlp.hidden{l}"), width, h, width, 1.0, &mut rng));
            width = h;
        }
        let out = Dense::init("mlp.out", width, 1, width + 1, 1.0, &mut rng);
        Ok(Self {
            grid,
            vocab,
            arch,
            embed,
            hidden,
            out,
        })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.embed.iter().collect();
        for d in &self.hidden {
            v.push(&d.weight);
            v.push(&d.bias);
        }
        v.push(&self.out.weight);
        v.push(&self.out.bias);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.embed.iter_mut().collect();
        for d in &mut self.hidden {
            v.push(&mut d.weight);
            v.push(&mut d.bias);
        }
        v.push(&mut self.out.weight);
        v.push(&mut self.out.bias);
        v
    }

    fn input(&self, x: &[usize], level: usize) -> Vec<f64> {
        let e = self.arch.embed_dim;
        let mut v = vec![0.0; self.vocab.len() * e + self.grid.len()];
        for (f, (t, &c)) in self.embed.iter().zip(x).enumerate() {
            v[f * e..(f + 1) * e].copy_from_slice(t.row(c));
        }
        v[self.vocab.len() * e + level] = 1.0;
        v
    }

    fn forward(&self, x: &[usize], level: usize) -> Trace {
        let (feat, tower) = tower_forward(&self.hidden, self.input(x, level));
        let logit = self.out.forward(&feat)[0];
        Trace { tower, feat, logit }
    }

    /// Mean weighted log loss of the batch and its gradient.
    pub fn loss_and_grad(&self, batch: &[Point]) -> (f64, Vec<Tensor>) {
        let mut grad = self.clone();
        for t in grad.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let m = batch.len().max(1) as f64;
        let e = self.arch.embed_dim;
        let mut loss = 0.0;
        for p in batch {
            let x = &p.features[..self.vocab.len()];
            let tr = self.forward(x, p.level);
            let prob = sigmoid(tr.logit);
            loss += log_loss(prob, p.label, p.weight);
            let dz = log_loss_dlogit(prob, p.label, p.weight) / m;
            if dz == 0.0 {
                continue;
            }
            let dfeat = self.out.backward(&mut grad.out, &tr.feat, &[dz]);
            let din = tower_backward(&self.hidden, &mut grad.hidden, &tr.tower, dfeat);
            for (f, (g, &c)) in grad.embed.iter_mut().zip(x).enumerate() {
                super::nn::axpy(1.0, &din[f * e..(f + 1) * e], g.row_mut(c));
            }
        }
        let mut tensors = grad.embed;
        for d in grad.hidden {
            tensors.push(d.weight);
            tensors.push(d.bias);
        }
        tensors.push(grad.out.weight);
        tensors.push(grad.out.bias);
        (loss / m, tensors)
    }

    pub fn total_loss(&self, batch: &[Point]) -> f64 {
        let m = batch.len().max(1) as f64;
        batch
            .iter()
            .map(|p| {
                let tr = self.forward(&p.features[..self.vocab.len()], p.level);
                log_loss(sigmoid(tr.logit), p.label, p.weight)
            })
            .sum::<f64>()
            / m
    }
}

impl ResponseModel for MlpModel {
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
        Ok(sigmoid(self.forward(x, level).logit))
    }
}
