//! Dense building blocks with hand-written backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Named parameter tensor stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn uniform<R: Rng>(name: impl Into<String>, shape: Vec<usize>, bound: f64, rng: &mut R) -> Self {
        let mut t = Self::zeros(name, shape);
        for v in &mut t.data {
            *v = rng.gen_range(-bound..=bound);
        }
        t
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.name.clone(), self.shape.clone())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.shape[1];
        &self.data[r * w..(r + 1) * w]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let w = self.shape[1];
        &mut self.data[r * w..(r + 1) * w]
    }

    pub(crate) fn check_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape || self.data.len() != shape.iter().product::<usize>() {
            return Err(Error::invalid(format!(
                "tensor {} has shape {:?} with {} values, expected {:?}",
                self.name,
                self.shape,
                self.data.len(),
                shape
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("tensor {} holds non-finite values", self.name)));
        }
        Ok(())
    }
}

/// Affine map `y = W x + b` with `W` of shape `[out, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn zeros(name: &str, input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(format!("{name}.weight"), vec![output, input]),
            bias: Tensor::zeros(format!("{name}.bias"), vec![output]),
        }
    }

    /// Uniform init with bound `gain * sqrt(6 / fan)`.
    pub fn init<R: Rng>(name: &str, input: usize, output: usize, fan: usize, gain: f64, rng: &mut R) -> Self {
        let bound = gain * (6.0 / fan.max(1) as f64).sqrt();
        Self {
            weight: Tensor::uniform(format!("{name}.weight"), vec![output, input], bound, rng),
            bias: Tensor::zeros(format!("{name}.bias"), vec![output]),
        }
    }

    pub fn input(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn output(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: self.weight.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.output())
            .map(|o| dot(self.weight.row(o), x) + self.bias.data[o])
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, grad: &mut Dense, x: &[f64], dy: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.input()];
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias.data[o] += g;
            axpy(g, x, grad.weight.row_mut(o));
            axpy(g, self.weight.row(o), &mut dx);
        }
        dx
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Stack of ReLU layers; keeps each layer's input and pre-activation.
#[derive(Debug, Clone, Default)]
pub struct TowerTrace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

pub fn tower_forward(layers: &[Dense], x: Vec<f64>) -> (Vec<f64>, TowerTrace) {
    let mut trace = TowerTrace::default();
    let mut h = x;
    for layer in layers {
        let pre = layer.forward(&h);
        let next = pre.iter().map(|&v| relu(v)).collect();
        trace.inputs.push(std::mem::replace(&mut h, next));
        trace.pre.push(pre);
    }
    (h, trace)
}

pub fn tower_backward(layers: &[Dense], grads: &mut [Dense], trace: &TowerTrace, dout: Vec<f64>) -> Vec<f64> {
    let mut d = dout;
    for l in (0..layers.len()).rev() {
        for (g, &p) in d.iter_mut().zip(&trace.pre[l]) {
            if p <= 0.0 {
                *g = 0.0;
            }
        }
        d = layers[l].backward(&mut grads[l], &trace.inputs[l], &d);
    }
    d
}

/// Embedding tables, one `[vocab, dim]` tensor per categorical feature.
pub fn embedding_tables<R: Rng>(prefix: &str, vocab: &[usize], dim: usize, bound: f64, rng: &mut R) -> Vec<Tensor> {
    vocab
        .iter()
        .enumerate()
        .map(|(f, &v)| Tensor::uniform(format!("{prefix}.embed{f}"), vec![v, dim], bound, rng))
        .collect()
}

pub fn check_features(x: &[usize], vocab: &[usize]) -> Result<()> {
    if x.len() != vocab.len() {
        return Err(Error::invalid(format!(
            "expected {} features, got {}",
            vocab.len(),
            x.len()
        )));
    }
    for (f, (&v, &size)) in x.iter().zip(vocab).enumerate() {
        if v >= size {
            return Err(Error::OutOfVocabulary {
                feature: f,
                value: v,
                size,
            });
        }
    }
    Ok(())
}

pub fn sum_embeddings(tables: &[Tensor], x: &[usize]) -> Vec<f64> {
    let mut s = vec![0.0; tables[0].shape[1]];
    for (t, &v) in tables.iter().zip(x) {
        axpy(1.0, t.row(v), &mut s);
    }
    s
}
