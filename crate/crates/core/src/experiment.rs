//! End-to-end synthetic runs: generate, split, train both model kinds,
//! allocate a per-capita budget over the test users and score the result
//! against the known ground truth.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::{build_matrix, solve_per_capita, AllocationPlan, CostModel, DualSolution, SolveOptions};
use crate::eval::{evaluate_model, future_cost, future_response_synthetic, EvalSettings, MetricsReport};
use crate::model::train::{train_dipn, train_mlp};
use crate::model::{to_points, AnyModel, DipnArch, DipnModel, EpochLog, MlpArch, MlpModel, TrainConfig};
use crate::synthdata::{draw_dataset_total, gen_population, SyntheticPopulation, TrainingSample};
use crate::{Error, IncentiveGrid, Result};

/// Named population shapes `(n1, n2, n3)`.
pub fn preset(name: &str) -> Result<[usize; 3]> {
    match name {
        "synthetic1" => Ok([2, 2, 2]),
        "synthetic2" => Ok([3, 5, 7]),
        other => Err(Error::invalid(format!(
            "unknown preset {other:?}; expected synthetic1 or synthetic2"
        ))),
    }
}

pub const DEFAULT_SPLITS: [usize; 3] = [5000, 5000, 10_000];

/// Per-capita budget used by the synthetic tables.
pub const DEFAULT_PER_CAPITA: f64 = 11.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<TrainingSample>,
    pub validation: Vec<TrainingSample>,
    pub test: Vec<TrainingSample>,
}

/// Consecutive splits of the given sizes; the sizes must add up exactly.
pub fn split(samples: Vec<TrainingSample>, sizes: [usize; 3]) -> Result<Splits> {
    if sizes.iter().sum::<usize>() != samples.len() {
        return Err(Error::invalid(format!(
            "split sizes {sizes:?} do not add up to {} samples",
            samples.len()
        )));
    }
    let mut rest = samples;
    let test = rest.split_off(sizes[0] + sizes[1]);
    let validation = rest.split_off(sizes[0]);
    Ok(Splits {
        train: rest,
        validation,
        test,
    })
}

/// Shuffles, then splits in proportion to `sizes`; the last split takes
/// the rounding remainder. For logs whose order carries structure.
pub fn split_proportional(mut samples: Vec<TrainingSample>, sizes: [usize; 3], seed: u64) -> Result<Splits> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::invalid("split sizes are all zero"));
    }
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = samples.len();
    let first = n * sizes[0] / total;
    let second = n * sizes[1] / total;
    split(samples, [first, second, n - first - second])
}

/// Seeds for population, data and model, all derived from one run seed so
/// that changing it changes every stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub population: u64,
    pub data: u64,
    pub model: u64,
}

impl Seeds {
    pub fn from_run(seed: u64) -> Self {
        Self {
            population: seed,
            data: seed.wrapping_add(1000),
            model: seed.wrapping_add(2000),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dipn,
    Mlp,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Dipn => "dipn",
            ModelKind::Mlp => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub dipn: DipnArch,
    pub mlp: MlpArch,
    pub train: TrainConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            dipn: DipnArch::default(),
            mlp: MlpArch::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Builds and trains one model. A seed given here overrides both the init
/// seed and `spec.train.seed`.
pub fn train_model(
    kind: ModelKind,
    grid: &IncentiveGrid,
    vocab: &[usize],
    train: &[TrainingSample],
    validation: Option<&[TrainingSample]>,
    spec: &ModelSpec,
    seed: u64,
) -> Result<(AnyModel, Vec<EpochLog>)> {
    let points = to_points(train, grid)?;
    let valid = validation.map(|v| to_points(v, grid)).transpose()?;
    let cfg = TrainConfig {
        seed,
        ..spec.train.clone()
    };
    match kind {
        ModelKind::Dipn => {
            let mut m = DipnModel::new(grid.clone(), vocab.to_vec(), spec.dipn.clone(), seed)?;
            let log = train_dipn(&mut m, &points, valid.as_deref(), &cfg)?;
            Ok((AnyModel::Dipn(m), log))
        }
        ModelKind::Mlp => {
            let mut m = MlpModel::new(grid.clone(), vocab.to_vec(), spec.mlp.clone(), seed)?;
            let log = train_mlp(&mut m, &points, valid.as_deref(), &cfg)?;
            Ok((AnyModel::Mlp(m), log))
        }
    }
}

pub fn users_of(samples: &[TrainingSample]) -> Vec<[usize; 3]> {
    samples.iter().map(|s| s.features).collect()
}

/// Face-value cost per-capita allocation over `users`.
pub fn allocate_per_capita(
    model: &AnyModel,
    users: &[[usize; 3]],
    per_capita: f64,
    opts: &SolveOptions,
) -> Result<(DualSolution, AllocationPlan)> {
    let m = build_matrix(model.as_response(), users, &[CostModel::FaceValue])?;
    solve_per_capita(&m, &[per_capita], opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub population: [usize; 3],
    pub seeds: Seeds,
    pub splits: [usize; 3],
    pub grid: IncentiveGrid,
    pub model: ModelSpec,
    pub per_capita: f64,
    pub solve: SolveOptions,
    pub eval: EvalSettings,
}

impl PipelineConfig {
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        Ok(Self {
            population: preset(name)?,
            seeds: Seeds::from_run(seed),
            splits: DEFAULT_SPLITS,
            grid: IncentiveGrid::stride(100, 10)?,
            model: ModelSpec::default(),
            per_capita: DEFAULT_PER_CAPITA,
            solve: SolveOptions::default(),
            eval: EvalSettings::default(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ModelRun {
    pub model: AnyModel,
    pub log: Vec<EpochLog>,
    pub dual: DualSolution,
    pub plan: AllocationPlan,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub population: SyntheticPopulation,
    pub splits: Splits,
    pub runs: Vec<ModelRun>,
}

/// Generates the population and data once, then trains, allocates and
/// evaluates each requested model kind on the same splits.
pub fn run_pipeline(cfg: &PipelineConfig, kinds: &[ModelKind]) -> Result<PipelineOutcome> {
    let [n1, n2, n3] = cfg.population;
    let population = gen_population(n1, n2, n3, cfg.seeds.population)?;
    let data = draw_dataset_total(&population, cfg.splits.iter().sum(), cfg.seeds.data);
    let splits = split(data, cfg.splits)?;
    let users = users_of(&splits.test);
    let runs = kinds
        .iter()
        .map(|&kind| {
            let (model, log) = train_model(
                kind,
                &cfg.grid,
                &population.n,
                &splits.train,
                Some(&splits.validation),
                &cfg.model,
                cfg.seeds.model,
            )?;
            let (dual, plan) = allocate_per_capita(&model, &users, cfg.per_capita, &cfg.solve)?;
            let mut report = evaluate_model(kind.name(), model.as_response(), &splits.test, &users, &cfg.eval)?;
            let response = future_response_synthetic(&plan, &users, &cfg.grid, &population)?;
            report.set_future(response, future_cost(&plan, &cfg.grid), Some(cfg.per_capita));
            Ok(ModelRun {
                model,
                log,
                dual,
                plan,
                report,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PipelineOutcome {
        population,
        splits,
        runs,
    })
}
