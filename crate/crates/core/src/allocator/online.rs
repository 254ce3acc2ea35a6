//! Per-user decisions from stored multipliers, and plan sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{best_level, AllocationPlan, CostModel, DualSolution, ResponseMatrix};
use crate::model::ResponseModel;
use crate::sum::NeumaierSum;
use crate::{Error, Result};

/// Level for one user under the stored multipliers: the argmax of
/// `f(x, d_j) - sum_k lambda_k g_k(d_j)`, ties toward the lowest total cost.
///
/// A per-capita solve's multipliers apply unchanged: shifting every cost of
/// a user by the same constant does not move the argmax.
pub fn online_decide(
    dual: &DualSolution,
    model: &dyn ResponseModel,
    x: &[usize],
    cost_models: &[CostModel],
) -> Result<usize> {
    decide_at(&dual.lambda, model, x, cost_models)
}

/// As [`online_decide`], but follows the stored boundary split: with
/// `u < mix` the user gets its choice under `lambda_low`. Feeding
/// `u ~ U(0, 1)` reproduces the solved plan's spend in expectation on a
/// cohort like the one the dual was solved for.
pub fn online_decide_mixed(
    dual: &DualSolution,
    model: &dyn ResponseModel,
    x: &[usize],
    cost_models: &[CostModel],
    u: f64,
) -> Result<usize> {
    if u < dual.mix && dual.lambda_low.len() == dual.lambda.len() {
        decide_at(&dual.lambda_low, model, x, cost_models)
    } else {
        decide_at(&dual.lambda, model, x, cost_models)
    }
}

fn decide_at(lambda: &[f64], model: &dyn ResponseModel, x: &[usize], cost_models: &[CostModel]) -> Result<usize> {
    if cost_models.len() != lambda.len() {
        return Err(Error::invalid(format!(
            "{} cost models for {} multipliers",
            cost_models.len(),
            lambda.len()
        )));
    }
    let f = model.predict_curve(x)?;
    let rows: Vec<Vec<f64>> = cost_models.iter().map(|c| c.row(model.grid())).collect::<Result<_>>()?;
    let score = |j: usize| {
        let mut s = f[j];
        for (l, r) in lambda.iter().zip(&rows) {
            s -= l * r[j];
        }
        s
    };
    let tie = |j: usize| rows.iter().map(|r| r[j]).sum::<f64>();
    Ok(best_level(score, tie, f.len()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledPlan {
    pub levels: Vec<usize>,
    pub realized_spend: Vec<f64>,
    pub expected_spend: Vec<f64>,
}

/// Draws a concrete level for every randomized user; deterministic users
/// consume no randomness.
pub fn sample_plan(plan: &AllocationPlan, m: &ResponseMatrix, seed: u64) -> Result<SampledPlan> {
    if plan.users() != m.users() {
        return Err(Error::invalid(format!(
            "plan covers {} users, matrix {}",
            plan.users(),
            m.users()
        )));
    }
    plan.validate(m.levels())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels: Vec<usize> = plan
        .assignment
        .iter()
        .map(|a| {
            let support = a.support();
            if support.len() == 1 {
                return support[0].0;
            }
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for &(l, p) in &support {
                acc += p;
                if u < acc {
                    return l;
                }
            }
            support[support.len() - 1].0
        })
        .collect();
    let realized_spend = (0..m.constraints())
        .map(|k| {
            levels
                .iter()
                .enumerate()
                .map(|(i, &j)| m.g_row(k, i)[j])
                .collect::<NeumaierSum>()
                .total()
        })
        .collect();
    Ok(SampledPlan {
        levels,
        realized_spend,
        expected_spend: plan.spend.clone(),
    })
}
