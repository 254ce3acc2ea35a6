//! Budget-constrained incentive assignment.
//!
//! The allocation LP is
//!
//! ```text
//! max  sum_ij z_ij f_ij
//! s.t. sum_j z_ij = 1,  z_ij >= 0               for every user i
//!      sum_ij z_ij g_kij <= B_k                 for every cost k
//! ```
//!
//! Relaxing the cost rows with multipliers `lambda_k >= 0` decouples users:
//! each picks `argmax_j f_ij - sum_k lambda_k g_kij`. The solvers search for
//! the multipliers and then mix the few users whose choice flips at the
//! final multiplier so that the binding budgets are met exactly.

mod dual;
mod exact;
mod io;
mod online;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{IncentiveGrid, ResponseModel};
use crate::sum::NeumaierSum;
use crate::{Error, Result};

pub use dual::{solve_dual_multi, solve_dual_single, solve_per_capita, MultiMethod, SolveOptions};
pub use exact::{solve_exact_small, ExactSolution, EXACT_SIZE_LIMIT};
pub use io::{read_dual, read_plan, write_dual, write_plan};
pub use online::{online_decide, online_decide_mixed, sample_plan, SampledPlan};

/// Cost of giving a user grid level `j` with face value `d_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostModel {
    /// `g_j = d_j`.
    FaceValue,
    /// `g_j = factor * d_j`.
    Scaled { factor: f64 },
    /// Explicit cost per grid level.
    PerLevel { costs: Vec<f64> },
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel::FaceValue
    }
}

impl CostModel {
    pub fn row(&self, grid: &IncentiveGrid) -> Result<Vec<f64>> {
        let row: Vec<f64> = match self {
            CostModel::FaceValue => grid.levels().to_vec(),
            CostModel::Scaled { factor } => grid.levels().iter().map(|d| factor * d).collect(),
            CostModel::PerLevel { costs } => {
                if costs.len() != grid.len() {
                    return Err(Error::invalid(format!(
                        "cost table has {} entries for a grid of {} levels",
                        costs.len(),
                        grid.len()
                    )));
                }
                costs.clone()
            }
        };
        if row.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("cost model produced a non-finite cost"));
        }
        Ok(row)
    }
}

/// Predicted responses `f` (`N x D`) and `K` cost matrices, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    grid: IncentiveGrid,
    users: usize,
    f: Vec<f64>,
    g: Vec<Vec<f64>>,
}

impl ResponseMatrix {
    /// `f` and every `g[k]` are `users x grid.len()`, row-major.
    pub fn new(grid: IncentiveGrid, users: usize, f: Vec<f64>, g: Vec<Vec<f64>>) -> Result<Self> {
        let size = users * grid.len();
        if f.len() != size {
            return Err(Error::invalid(format!("response matrix has {} entries, expected {size}", f.len())));
        }
        if g.is_empty() {
            return Err(Error::invalid("at least one cost matrix is required"));
        }
        if let Some(k) = g.iter().position(|gk| gk.len() != size) {
            return Err(Error::invalid(format!("cost matrix {k} does not match the response matrix")));
        }
        if let Some(v) = f.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("response {v} outside [0, 1]")));
        }
        if g.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::invalid("cost matrices must be finite"));
        }
        Ok(Self { grid, users, f, g })
    }

    pub fn grid(&self) -> &IncentiveGrid {
        &self.grid
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn levels(&self) -> usize {
        self.grid.len()
    }

    pub fn constraints(&self) -> usize {
        self.g.len()
    }

    pub fn f_row(&self, i: usize) -> &[f64] {
        let d = self.levels();
        &self.f[i * d..(i + 1) * d]
    }

    pub fn g_row(&self, k: usize, i: usize) -> &[f64] {
        let d = self.levels();
        &self.g[k][i * d..(i + 1) * d]
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn g(&self, k: usize) -> &[f64] {
        &self.g[k]
    }

    /// Same responses, costs shifted by `-shift[k]` in every cell.
    pub fn shifted(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.constraints() {
            return Err(Error::invalid(format!(
                "{} per-capita budgets for {} cost kinds",
                shift.len(),
                self.constraints()
            )));
        }
        let g = self
            .g
            .iter()
            .zip(shift)
            .map(|(gk, b)| gk.iter().map(|c| c - b).collect())
            .collect();
        Ok(Self {
            grid: self.grid.clone(),
            users: self.users,
            f: self.f.clone(),
            g,
        })
    }

    /// Digest of grid, responses and costs; a dual solution records it so
    /// a later decision can detect that it was solved against other data.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for l in self.grid.levels() {
            h.update(l.to_le_bytes());
        }
        h.update((self.users as u64).to_le_bytes());
        for v in &self.f {
            h.update(v.to_le_bytes());
        }
        for gk in &self.g {
            for v in gk {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Evaluates the model for every user at every grid level.
pub fn build_matrix(model: &dyn ResponseModel, users: &[[usize; 3]], cost_models: &[CostModel]) -> Result<ResponseMatrix> {
    let grid = model.grid().clone();
    if cost_models.is_empty() {
        return Err(Error::invalid("at least one cost model is required"));
    }
    let rows: Vec<Vec<f64>> = cost_models.iter().map(|c| c.row(&grid)).collect::<Result<_>>()?;
    let nvocab = model.vocab().len();
    let curves: Vec<Vec<f64>> = users
        .par_iter()
        .enumerate()
        .map(|(i, x)| model.predict_curve(&x[..nvocab]).map_err(|e| e.for_user(i)))
        .collect::<Result<_>>()?;
    let f: Vec<f64> = curves.into_iter().flatten().collect();
    let g = rows.iter().map(|r| r.repeat(users.len())).collect();
    ResponseMatrix::new(grid, users.len(), f, g)
}

/// One user's randomized or deterministic level choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Assignment {
    Single { level: usize },
    /// `(level, probability)` pairs with probabilities summing to one.
    Mixed { mix: Vec<(usize, f64)> },
}

impl Assignment {
    pub fn single(level: usize) -> Self {
        Assignment::Single { level }
    }

    /// Two-point mix; collapses to a single level when `p_high` is 0 or 1.
    pub fn split(low: usize, high: usize, p_high: f64) -> Self {
        if p_high <= 0.0 || low == high {
            Assignment::Single { level: low }
        } else if p_high >= 1.0 {
            Assignment::Single { level: high }
        } else {
            Assignment::Mixed {
                mix: vec![(low, 1.0 - p_high), (high, p_high)],
            }
        }
    }

    /// `theta * a + (1 - theta) * b`, merging repeated levels.
    pub fn blend(a: &Assignment, b: &Assignment, theta: f64) -> Self {
        if theta <= 0.0 {
            return b.clone();
        }
        if theta >= 1.0 || a == b {
            return a.clone();
        }
        let mut mix: Vec<(usize, f64)> = Vec::new();
        for (l, p) in a.support().into_iter().map(|(l, p)| (l, p * theta)).chain(
            b.support().into_iter().map(|(l, p)| (l, p * (1.0 - theta))),
        ) {
            match mix.iter_mut().find(|(m, _)| *m == l) {
                Some(e) => e.1 += p,
                None => mix.push((l, p)),
            }
        }
        mix.retain(|(_, p)| *p > 0.0);
        mix.sort_by_key(|(l, _)| *l);
        if mix.len() == 1 {
            Assignment::Single { level: mix[0].0 }
        } else {
            Assignment::Mixed { mix }
        }
    }

    pub fn support(&self) -> Vec<(usize, f64)> {
        match self {
            Assignment::Single { level } => vec![(*level, 1.0)],
            Assignment::Mixed { mix } => mix.clone(),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, Assignment::Single { .. })
    }

    /// Expectation of a per-level quantity under this assignment.
    pub fn expect(&self, row: &[f64]) -> f64 {
        match self {
            Assignment::Single { level } => row[*level],
            Assignment::Mixed { mix } => mix.iter().map(|&(l, p)| p * row[l]).sum(),
        }
    }

    fn validate(&self, levels: usize) -> Result<()> {
        for (l, p) in self.support() {
            if l >= levels || !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("assignment entry ({l}, {p}) is invalid")));
            }
        }
        let total: f64 = self.support().iter().map(|x| x.1).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("assignment probabilities sum to {total}")));
        }
        Ok(())
    }
}

/// Per-user assignments with their expected spend and objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationPlan {
    pub assignment: Vec<Assignment>,
    /// Expected spend per cost kind.
    pub spend: Vec<f64>,
    pub objective: f64,
    pub lambda: Vec<f64>,
}

impl AllocationPlan {
    pub fn from_assignment(m: &ResponseMatrix, assignment: Vec<Assignment>, lambda: Vec<f64>) -> Self {
        let objective = assignment
            .iter()
            .enumerate()
            .map(|(i, a)| a.expect(m.f_row(i)))
            .collect::<NeumaierSum>()
            .total();
        let spend = (0..m.constraints())
            .map(|k| {
                assignment
                    .iter()
                    .enumerate()
                    .map(|(i, a)| a.expect(m.g_row(k, i)))
                    .collect::<NeumaierSum>()
                    .total()
            })
            .collect();
        Self {
            assignment,
            spend,
            objective,
            lambda,
        }
    }

    pub fn users(&self) -> usize {
        self.assignment.len()
    }

    /// Users that receive a randomized assignment.
    pub fn boundary_users(&self) -> usize {
        self.assignment.iter().filter(|a| !a.is_deterministic()).count()
    }

    pub fn validate(&self, levels: usize) -> Result<()> {
        self.assignment.iter().enumerate().try_for_each(|(i, a)| a.validate(levels).map_err(|e| e.for_user(i)))
    }

    /// Mean assigned face value per user.
    pub fn mean_incentive(&self, grid: &IncentiveGrid) -> f64 {
        if self.assignment.is_empty() {
            return 0.0;
        }
        let total: NeumaierSum = self.assignment.iter().map(|a| a.expect(grid.levels())).collect();
        total.total() / self.assignment.len() as f64
    }
}

/// Multipliers found by a dual solver with their diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub lambda: Vec<f64>,
    /// Multipliers at the overspending end of the final bracket. A cohort
    /// that picks its `lambda_low` choice with probability `mix` and its
    /// `lambda` choice otherwise reproduces the solved plan in expectation,
    /// including the split of users tied at the boundary.
    #[serde(default)]
    pub lambda_low: Vec<f64>,
    #[serde(default)]
    pub mix: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Expected spend of the returned plan per cost kind.
    pub spend: Vec<f64>,
    pub budgets: Vec<f64>,
    pub objective: f64,
    pub matrix_checksum: String,
    /// Digest of the model the matrix came from, when the caller recorded
    /// one; decisions against a different model are refused.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_checksum: Option<String>,
}

/// `true` if `spend <= budget` up to the feasibility tolerance.
pub fn within_budget(spend: f64, budget: f64) -> bool {
    spend <= budget + budget_tolerance(budget)
}

pub fn budget_tolerance(budget: f64) -> f64 {
    1e-9 * budget.abs().max(1.0)
}

/// Index of the best level for one user: highest `score`, ties to the
/// lowest `tie` value, then the lowest level.
pub(crate) fn best_level(score: impl Fn(usize) -> f64, tie: impl Fn(usize) -> f64, levels: usize) -> usize {
    let mut best = 0;
    let mut best_score = score(0);
    for j in 1..levels {
        let s = score(j);
        if s > best_score || (s == best_score && tie(j) < tie(best)) {
            best = j;
            best_score = s;
        }
    }
    best
}

/// Per-user argmax of `f - sum_k lambda_k g_k`, ties toward the lowest
/// total cost. Every user is deterministic.
pub fn assign_given_lambda(m: &ResponseMatrix, lambda: &[f64]) -> Result<AllocationPlan> {
    if lambda.len() != m.constraints() {
        return Err(Error::invalid(format!(
            "{} multipliers for {} cost kinds",
            lambda.len(),
            m.constraints()
        )));
    }
    if let Some(l) = lambda.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::invalid(format!("multiplier {l} must be finite and >= 0")));
    }
    let d = m.levels();
    let levels: Vec<usize> = (0..m.users())
        .into_par_iter()
        .map(|i| {
            let f = m.f_row(i);
            let score = |j: usize| {
                let mut s = f[j];
                for (k, l) in lambda.iter().enumerate() {
                    s -= l * m.g_row(k, i)[j];
                }
                s
            };
            let tie = |j: usize| (0..m.constraints()).map(|k| m.g_row(k, i)[j]).sum::<f64>();
            best_level(score, tie, d)
        })
        .collect();
    Ok(AllocationPlan::from_assignment(
        m,
        levels.into_iter().map(Assignment::single).collect(),
        lambda.to_vec(),
    ))
}


/// Expected plan of a stored dual policy on any cohort: every user takes
/// its `lambda_low` choice with probability `mix`, its `lambda` choice
/// otherwise. On the cohort the dual was solved for this spends the budget.
pub fn assign_given_dual(m: &ResponseMatrix, dual: &DualSolution) -> Result<AllocationPlan> {
    let hi = assign_given_lambda(m, &dual.lambda)?;
    if !(dual.mix > 0.0) || dual.lambda_low.len() != dual.lambda.len() {
        return Ok(hi);
    }
    let lo = assign_given_lambda(m, &dual.lambda_low)?;
    let assignment = lo
        .assignment
        .iter()
        .zip(&hi.assignment)
        .map(|(a, b)| Assignment::blend(a, b, dual.mix))
        .collect();
    Ok(AllocationPlan::from_assignment(m, assignment, dual.lambda.clone()))
}
