use serde::{Deserialize, Serialize};

use super::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    #[default]
    Adam,
}

const MOMENTUM: f64 = 0.9;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First-order optimizer state over a fixed list of tensors.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &[&Tensor]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            kind,
            lr,
            step: 0,
            second: zeros.clone(),
            first: zeros,
        }
    }

    /// Updates every tensor whose `trainable` flag is set; others are left
    /// bit-for-bit untouched.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], trainable: &[bool]) {
        self.step += 1;
        let t = self.step as f64;
        for (i, p) in params.into_iter().enumerate() {
            if !trainable[i] {
                continue;
            }
            let g = &grads[i].data;
            match self.kind {
                OptimizerKind::Sgd => {
                    for (v, gi) in p.data.iter_mut().zip(g) {
                        *v -= self.lr * gi;
                    }
                }
                OptimizerKind::Momentum => {
                    let m = &mut self.first[i];
                    for ((v, gi), mi) in p.data.iter_mut().zip(g).zip(m.iter_mut()) {
                        *mi = MOMENTUM * *mi + gi;
                        *v -= self.lr * *mi;
                    }
                }
                OptimizerKind::Adam => {
                    let c1 = 1.0 - BETA1.powf(t);
                    let c2 = 1.0 - BETA2.powf(t);
                    let (m, s) = (&mut self.first[i], &mut self.second[i]);
                    for (((v, gi), mi), si) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(s.iter_mut()) {
                        *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                        *si = BETA2 * *si + (1.0 - BETA2) * gi * gi;
                        *v -= self.lr * (*mi / c1) / ((*si / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}
