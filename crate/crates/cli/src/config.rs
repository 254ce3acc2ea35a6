//! Run configuration: one TOML file with a section per stage.
//!
//! Precedence, lowest first: built-in defaults, the named preset, the
//! config file, command-line flags. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use promo_core::allocator::{CostModel, SolveOptions};
use promo_core::eval::{EvalSettings, DEFAULT_EQ_TOL};
use promo_core::experiment::{self, ModelKind, ModelSpec, Seeds, DEFAULT_PER_CAPITA, DEFAULT_SPLITS};
use promo_core::model::{DipnArch, MlpArch, TrainConfig};
use promo_core::{biascorrect, IncentiveGrid};
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `synthetic1` or `synthetic2`; sets the population shape unless
    /// `population.n` is given.
    pub preset: Option<String>,
    /// Run seed; every stage seed not set explicitly derives from it.
    pub seed: u64,
    pub paths: Paths,
    pub population: PopulationSpec,
    pub data: DataSpec,
    pub grid: GridSpec,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub bias_correction: BiasCorrection,
    pub budget: BudgetSpec,
    pub solve: SolveOptions,
    pub metrics: MetricsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            seed: 0,
            paths: Paths::default(),
            population: PopulationSpec::default(),
            data: DataSpec::default(),
            grid: GridSpec::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            bias_correction: BiasCorrection::default(),
            budget: BudgetSpec::default(),
            solve: SolveOptions::default(),
            metrics: MetricsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory holding every artifact of the run.
    pub dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { dir: PathBuf::from("run") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSpec {
    pub n: Option<[usize; 3]>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    /// Train / validation / test sizes.
    pub splits: [usize; 3],
    pub seed: Option<u64>,
    /// Nonzero draws incentives with category-dependent bias; the split
    /// sizes then act as proportions of the logged data.
    pub bias_strength: f64,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            splits: DEFAULT_SPLITS,
            seed: None,
            bias_strength: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Explicit levels; overrides `stride`.
    pub levels: Option<Vec<f64>>,
    pub stride: u32,
    pub max: u32,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            levels: None,
            stride: 10,
            max: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub seed: Option<u64>,
    pub dipn: DipnArch,
    pub mlp: MlpArch,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Dipn,
            seed: None,
            dipn: DipnArch::default(),
            mlp: MlpArch::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropensitySource {
    /// Estimated from the training split.
    Fitted,
    /// Recorded with each logged sample.
    Logged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasCorrection {
    pub enabled: bool,
    pub source: PropensitySource,
    /// Feature indices that define a propensity bucket.
    pub bucket: Vec<usize>,
    pub smoothing: f64,
    pub clip_max: f64,
}

impl Default for BiasCorrection {
    fn default() -> Self {
        Self {
            enabled: false,
            source: PropensitySource::Fitted,
            bucket: vec![0, 1, 2],
            smoothing: biascorrect::DEFAULT_SMOOTHING,
            clip_max: biascorrect::DEFAULT_CLIP_MAX,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetSpec {
    /// Average spend per user, one entry per cost kind.
    pub per_capita: Option<Vec<f64>>,
    /// Total spend, one entry per cost kind.
    pub total: Option<Vec<f64>>,
    /// Cost kinds; face value when empty.
    pub costs: Vec<CostModel>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget<'a> {
    PerCapita(&'a [f64]),
    Total(&'a [f64]),
}

impl BudgetSpec {
    pub fn cost_models(&self) -> Vec<CostModel> {
        if self.costs.is_empty() {
            vec![CostModel::FaceValue]
        } else {
            self.costs.clone()
        }
    }

    pub fn budget(&self) -> Budget<'_> {
        match (&self.per_capita, &self.total) {
            (_, Some(t)) => Budget::Total(t),
            (Some(p), None) => Budget::PerCapita(p),
            (None, None) => Budget::PerCapita(&[DEFAULT_PER_CAPITA]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub eq_tol: f64,
    /// MLSS window radius; two of the widest grid steps when unset.
    pub mlss_radius: Option<f64>,
    /// Score plans against logged test records even when the ground truth
    /// is available.
    pub holdout: bool,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            eq_tol: DEFAULT_EQ_TOL,
            mlss_radius: None,
            holdout: false,
        }
    }
}

impl MetricsSection {
    pub fn settings(&self) -> EvalSettings {
        EvalSettings {
            eq_tol: self.eq_tol,
            mlss_radius: self.mlss_radius,
        }
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dir: Option<PathBuf>,
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub model: Option<ModelKind>,
    pub per_capita: Option<f64>,
    pub total: Option<f64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| UsageError(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str::<RunConfig>(&text)
                    .map_err(|e| UsageError(format!("config {}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(d) = &overrides.dir {
            cfg.paths.dir = d.clone();
        }
        if let Some(p) = &overrides.preset {
            cfg.preset = Some(p.clone());
            cfg.population.n = None;
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
            cfg.population.seed = None;
            cfg.data.seed = None;
            cfg.model.seed = None;
        }
        if let Some(k) = overrides.model {
            cfg.model.kind = k;
        }
        if let Some(b) = overrides.per_capita {
            cfg.budget.per_capita = Some(vec![b]);
            cfg.budget.total = None;
        }
        if let Some(b) = overrides.total {
            cfg.budget.total = Some(vec![b]);
            cfg.budget.per_capita = None;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let fail = |m: String| Err(UsageError(m).into());
        if let Some(p) = &self.preset {
            experiment::preset(p).map_err(|e| UsageError(e.to_string()))?;
        }
        if self.population.n.is_some_and(|n| n.contains(&0)) {
            return fail("population.n entries must be >= 1".into());
        }
        if self.budget.per_capita.is_some() && self.budget.total.is_some() {
            return fail("budget: give exactly one of per_capita and total".into());
        }
        let k = self.budget.cost_models().len();
        let given = match self.budget.budget() {
            Budget::PerCapita(b) | Budget::Total(b) => b.len(),
        };
        if given != k {
            return fail(format!("budget: {given} budget value(s) for {k} cost kind(s)"));
        }
        if !(self.data.bias_strength >= 0.0) {
            return fail("data.bias_strength must be >= 0".into());
        }
        if !(self.metrics.eq_tol >= 0.0) {
            return fail("metrics.eq_tol must be >= 0".into());
        }
        self.train.validate().map_err(|e| UsageError(format!("train: {e}")))?;
        self.grid().map_err(|e| UsageError(format!("grid: {e}")))?;
        Ok(())
    }

    pub fn population_shape(&self) -> [usize; 3] {
        self.population.n.unwrap_or_else(|| {
            experiment::preset(self.preset.as_deref().unwrap_or("synthetic1")).expect("validated preset")
        })
    }

    pub fn seeds(&self) -> Seeds {
        let base = Seeds::from_run(self.seed);
        Seeds {
            population: self.population.seed.unwrap_or(base.population),
            data: self.data.seed.unwrap_or(base.data),
            model: self.model.seed.unwrap_or(base.model),
        }
    }

    pub fn grid(&self) -> promo_core::Result<IncentiveGrid> {
        match &self.grid.levels {
            Some(l) => IncentiveGrid::new(l.clone()),
            None => IncentiveGrid::stride(self.grid.max, self.grid.stride),
        }
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            dipn: self.model.dipn.clone(),
            mlp: self.model.mlp.clone(),
            train: self.train.clone(),
        }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.paths.dir.join(name)
    }

    pub fn kind_file(&self, stem: &str, kind: ModelKind, ext: &str) -> PathBuf {
        self.file(&format!("{stem}-{}.{ext}", kind.name()))
    }
}
