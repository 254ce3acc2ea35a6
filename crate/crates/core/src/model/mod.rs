//! Incentive-response models.
//!
//! [`dipn::DipnModel`] is monotone in the incentive by construction: the
//! incentive enters only through its isotonic embedding, weighted by
//! per-user nonnegative uplift weights. [`mlp::MlpModel`] is the
//! unconstrained baseline. Both are trained by mini-batch descent on
//! hand-derived gradients ([`train`]).

pub mod dipn;
pub mod grid;
pub mod loss;
pub mod mlp;
pub mod nn;
pub mod optim;
pub mod train;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::synthdata::TrainingSample;
use crate::{Error, Result, FORMAT_VERSION};

pub use dipn::{DipnArch, DipnModel};
pub use grid::{IncentiveGrid, IsotonicEmbedding};
pub use mlp::{MlpArch, MlpModel};
pub use optim::OptimizerKind;
pub use train::{alpha_schedule, EpochLog, Phase, TrainConfig};

/// Anything that yields a response probability for a user at a grid level.
pub trait ResponseModel: Sync {
    fn grid(&self) -> &IncentiveGrid;

    fn vocab(&self) -> &[usize];

    fn predict_level(&self, x: &[usize], level: usize) -> Result<f64>;

    /// Response at every grid level.
    fn predict_curve(&self, x: &[usize]) -> Result<Vec<f64>> {
        (0..self.grid().len()).map(|j| self.predict_level(x, j)).collect()
    }

    /// Response at an incentive value; off-grid values round down.
    fn predict(&self, x: &[usize], c: f64) -> Result<f64> {
        let j = self.grid().level_index(c)?;
        self.predict_level(x, j)
    }
}

/// A training observation resolved onto the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub features: [usize; 3],
    pub level: usize,
    pub label: u8,
    pub weight: f64,
}

pub fn to_points(samples: &[TrainingSample], grid: &IncentiveGrid) -> Result<Vec<Point>> {
    samples
        .iter()
        .map(|s| {
            Ok(Point {
                features: s.features,
                level: grid.level_index(f64::from(s.incentive))?,
                label: s.label,
                weight: s.weight,
            })
        })
        .collect()
}

/// Either trained model kind, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Dipn(DipnModel),
    Mlp(MlpModel),
}

impl AnyModel {
    pub fn kind(&self) -> &'static str {
        match self {
            AnyModel::Dipn(_) => "dipn",
            AnyModel::Mlp(_) => "mlp",
        }
    }

    pub fn as_response(&self) -> &dyn ResponseModel {
        match self {
            AnyModel::Dipn(m) => m,
            AnyModel::Mlp(m) => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ModelBody {
    Dipn { arch: DipnArch },
    Mlp { arch: MlpArch },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    #[serde(flatten)]
    body: ModelBody,
    grid: IncentiveGrid,
    vocab: Vec<usize>,
    tensors: Vec<nn::Tensor>,
    #[serde(default)]
    train_config: Option<TrainConfig>,
}

pub fn save_model<W: Write>(mut w: W, model: &AnyModel, cfg: Option<&TrainConfig>) -> Result<()> {
    let (body, grid, vocab, tensors) = match model {
        AnyModel::Dipn(m) => (
            ModelBody::Dipn { arch: m.arch.clone() },
            m.grid.clone(),
            m.vocab.clone(),
            m.tensors().into_iter().cloned().collect(),
        ),
        AnyModel::Mlp(m) => (
            ModelBody::Mlp { arch: m.arch.clone() },
            m.grid.clone(),
            m.vocab.clone(),
            m.tensors().into_iter().cloned().collect(),
        ),
    };
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        body,
        grid,
        vocab,
        tensors,
        train_config: cfg.cloned(),
    };
    serde_json::to_writer_pretty(&mut w, &file)?;
    writeln!(w)?;
    Ok(())
}

pub fn load_model<R: Read>(r: R) -> Result<(AnyModel, Option<TrainConfig>)> {
    let file: ModelFile = serde_json::from_reader(r)?;
    crate::synthdata::check_version(file.format_version)?;
    let model = match file.body {
        ModelBody::Dipn { arch } => {
            let mut m = DipnModel::zeros(file.grid, file.vocab, arch)?;
            fill_tensors(m.tensors_mut(), file.tensors)?;
            AnyModel::Dipn(m)
        }
        ModelBody::Mlp { arch } => {
            let mut m = MlpModel::zeros(file.grid, file.vocab, arch)?;
            fill_tensors(m.tensors_mut(), file.tensors)?;
            AnyModel::Mlp(m)
        }
    };
    Ok((model, file.train_config))
}

fn fill_tensors(slots: Vec<&mut nn::Tensor>, stored: Vec<nn::Tensor>) -> Result<()> {
    if slots.len() != stored.len() {
        return Err(Error::invalid(format!(
            "model file holds {} tensors, architecture expects {}",
            stored.len(),
            slots.len()
        )));
    }
    for (slot, t) in slots.into_iter().zip(stored) {
        if slot.name != t.name {
            return Err(Error::invalid(format!("expected tensor {}, found {}", slot.name, t.name)));
        }
        t.check_shape(&slot.shape)?;
        *slot = t;
    }
    Ok(())
}

/// Stable digest of a model's grid, vocabulary and parameters.
pub fn model_checksum(model: &AnyModel) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(model.kind().as_bytes());
    let (grid, vocab, tensors): (&IncentiveGrid, &[usize], Vec<&nn::Tensor>) = match model {
        AnyModel::Dipn(m) => (&m.grid, &m.vocab, m.tensors()),
        AnyModel::Mlp(m) => (&m.grid, &m.vocab, m.tensors()),
    };
    for l in grid.levels() {
        h.update(l.to_le_bytes());
    }
    for v in vocab {
        h.update((*v as u64).to_le_bytes());
    }
    for t in tensors {
        h.update(t.name.as_bytes());
        for v in &t.data {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
