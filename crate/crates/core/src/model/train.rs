//! Mini-batch training loops.
//!
//! The isotonic network trains in two phases. The bias phase fits only the
//! bias net, on samples that fall on the lowest grid level. The uplift phase
//! then freezes the bias net and fits the uplift net on every sample, with
//! the smoothness weight decaying linearly per mini-batch step.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::SMOOTH_EPS;
use super::nn::Tensor;
use super::optim::{Optimizer, OptimizerKind};
use super::{DipnModel, MlpModel, Point};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub bias_epochs: usize,
    pub uplift_epochs: usize,
    pub mlp_epochs: usize,
    pub batch_size: usize,
    pub alpha_upper: f64,
    pub alpha_lower: f64,
    pub alpha_decay: f64,
    /// Floor added to the smoothness denominator.
    pub smooth_eps: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// When validation data is given, end each phase with the parameters of
    /// its lowest-validation-loss epoch instead of the last one.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            // The lowest level holds only a small slice of the data, so the
            // bias phase needs many passes to take a useful number of steps.
            bias_epochs: 200,
            uplift_epochs: 50,
            mlp_epochs: 50,
            batch_size: 256,
            alpha_upper: 1.0,
            alpha_lower: 0.01,
            alpha_decay: 1e-3,
            smooth_eps: SMOOTH_EPS,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            keep_best: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.alpha_lower >= 0.0 && self.alpha_upper >= self.alpha_lower) {
            return Err(Error::invalid("need alpha_upper >= alpha_lower >= 0"));
        }
        if !(self.smooth_eps > 0.0) {
            return Err(Error::invalid("smooth_eps must be positive"));
        }
        if !(self.alpha_decay >= 0.0) {
            return Err(Error::invalid("alpha_decay must be >= 0"));
        }
        Ok(())
    }
}

/// Smoothness weight after `global_step` uplift-phase updates.
pub fn alpha_schedule(cfg: &TrainConfig, global_step: u64) -> f64 {
    cfg.alpha_lower.max(cfg.alpha_upper - cfg.alpha_decay * global_step as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Bias,
    Uplift,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: Phase,
    pub alpha: f64,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
    /// Set on the epoch whose parameters the phase ended with.
    #[serde(default)]
    pub kept: bool,
}

pub fn write_log<W: Write>(mut w: W, log: &[EpochLog]) -> Result<()> {
    for e in log {
        serde_json::to_writer(&mut w, e)?;
        writeln!(w)?;
    }
    Ok(())
}

trait Trainable {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    fn batch_grad(&self, batch: &[Point], alpha: f64, eps: f64) -> Vec<Tensor>;
    fn loss(&self, points: &[Point], alpha: f64, eps: f64) -> f64;
}

impl Trainable for DipnModel {
    fn params(&self) -> Vec<&Tensor> {
        self.tensors()
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.tensors_mut()
    }
    fn batch_grad(&self, batch: &[Point], alpha: f64, eps: f64) -> Vec<Tensor> {
        self.loss_and_grad(batch, alpha, eps).1
    }
    fn loss(&self, points: &[Point], alpha: f64, eps: f64) -> f64 {
        self.total_loss(points, alpha, eps)
    }
}

impl Trainable for MlpModel {
    fn params(&self) -> Vec<&Tensor> {
        self.tensors()
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.tensors_mut()
    }
    fn batch_grad(&self, batch: &[Point], _alpha: f64, _eps: f64) -> Vec<Tensor> {
        self.loss_and_grad(batch).1
    }
    fn loss(&self, points: &[Point], _alpha: f64, _eps: f64) -> f64 {
        self.total_loss(points)
    }
}

struct Run<'a> {
    cfg: &'a TrainConfig,
    epochs: usize,
    phase: Phase,
    trainable: Vec<bool>,
}

impl Run<'_> {
    fn execute<M: Trainable>(
        self,
        model: &mut M,
        points: &[Point],
        validation: Option<&[Point]>,
        alpha_at: impl Fn(u64) -> f64,
    ) -> Vec<EpochLog> {
        let mut rng = phase_rng(self.cfg.seed, self.phase);
        let mut opt = Optimizer::new(self.cfg.optimizer, self.cfg.learning_rate, &model.params());
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        let mut step = 0u64;
        let mut log: Vec<EpochLog> = Vec::with_capacity(self.epochs);
        let mut best: Option<(f64, usize, Vec<Tensor>)> = None;
        for epoch in 0..self.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(self.cfg.batch_size) {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| points[i]));
                let g = model.batch_grad(&batch, alpha_at(step), self.cfg.smooth_eps);
                opt.step(model.params_mut(), &g, &self.trainable);
                step += 1;
            }
            let alpha = alpha_at(step);
            let validation_loss = validation.map(|v| model.loss(v, 0.0, self.cfg.smooth_eps));
            if let (true, Some(v)) = (self.cfg.keep_best, validation_loss) {
                if best.as_ref().map_or(true, |b| v < b.0) {
                    best = Some((v, epoch, model.params().into_iter().cloned().collect()));
                }
            }
            log.push(EpochLog {
                epoch,
                phase: self.phase,
                alpha,
                train_loss: model.loss(points, alpha, self.cfg.smooth_eps),
                validation_loss,
                kept: false,
            });
        }
        match best {
            Some((_, epoch, params)) => {
                for (t, saved) in model.params_mut().into_iter().zip(params) {
                    *t = saved;
                }
                log[epoch].kept = true;
            }
            None => {
                if let Some(last) = log.last_mut() {
                    last.kept = true;
                }
            }
        }
        log
    }
}

fn phase_rng(seed: u64, phase: Phase) -> ChaCha8Rng {
    let salt = match phase {
        Phase::Bias => 0x5eed_0001,
        Phase::Uplift => 0x5eed_0002,
        Phase::Mlp => 0x5eed_0003,
    };
    ChaCha8Rng::seed_from_u64(seed ^ salt)
}

fn lowest_level(points: &[Point]) -> Vec<Point> {
    points.iter().filter(|p| p.level == 0).copied().collect()
}

/// Bias-net phase: fits only bias-net tensors on lowest-level samples.
pub fn train_bias_phase(
    model: &mut DipnModel,
    points: &[Point],
    validation: Option<&[Point]>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    let base = lowest_level(points);
    if base.is_empty() {
        return Err(Error::EmptyLowestLevel {
            level: model.grid.level(0),
        });
    }
    let valid = validation.map(lowest_level).filter(|v| !v.is_empty());
    let n_bias = model.bias_tensor_count();
    let run = Run {
        cfg,
        epochs: cfg.bias_epochs,
        phase: Phase::Bias,
        trainable: (0..model.tensors().len()).map(|i| i < n_bias).collect(),
    };
    Ok(run.execute(model, &base, valid.as_deref(), |_| 0.0))
}

/// Uplift-net phase: bias net frozen, all samples, decaying smoothness weight.
pub fn train_uplift_phase(
    model: &mut DipnModel,
    points: &[Point],
    validation: Option<&[Point]>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    let n_bias = model.bias_tensor_count();
    let run = Run {
        cfg,
        epochs: cfg.uplift_epochs,
        phase: Phase::Uplift,
        trainable: (0..model.tensors().len()).map(|i| i >= n_bias).collect(),
    };
    Ok(run.execute(model, points, validation, |step| alpha_schedule(cfg, step)))
}

/// Both phases in order.
pub fn train_dipn(
    model: &mut DipnModel,
    points: &[Point],
    validation: Option<&[Point]>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    let mut log = train_bias_phase(model, points, validation, cfg)?;
    log.extend(train_uplift_phase(model, points, validation, cfg)?);
    Ok(log)
}

pub fn train_mlp(
    model: &mut MlpModel,
    points: &[Point],
    validation: Option<&[Point]>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    let run = Run {
        cfg,
        epochs: cfg.mlp_epochs,
        phase: Phase::Mlp,
        trainable: vec![true; model.tensors().len()],
    };
    Ok(run.execute(model, points, validation, |_| 0.0))
}
