//! Dual solvers.
//!
//! A single budget is solved by bisection: total spend at the per-user
//! argmax is a nonincreasing step function of the multiplier. After the
//! bracket collapses, users whose choice differs between the two ends are
//! upgraded in order of marginal response per unit cost until the budget is
//! met, the last one fractionally.
//!
//! Several budgets are solved by nesting: the outermost multiplier is
//! bisected while every candidate value is handed to an exact solve of the
//! remaining constraints, and the two plans bracketing the final value are
//! blended to meet the outer budget. Projected subgradient ascent is
//! available as an alternative.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    best_level, budget_tolerance, within_budget, AllocationPlan, Assignment, DualSolution, ResponseMatrix,
};
use crate::sum::NeumaierSum;
use crate::{Error, Result};

const BRACKET_DOUBLINGS: usize = 80;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MultiMethod {
    /// Exact nested bisection over the multipliers.
    Nested,
    /// Projected subgradient ascent `lambda_k <- max(0, lambda_k + eta_t *
    /// (spend_k - B_k) / N)` with `eta_t = eta0 / sqrt(t)`, then sequential
    /// per-constraint repair. `eta0` defaults to `1 / max|g|`.
    Subgradient {
        iterations: usize,
        #[serde(default)]
        eta0: Option<f64>,
    },
}

impl Default for MultiMethod {
    fn default() -> Self {
        MultiMethod::Nested
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    /// Bisection stops once the plan spends within `tol_rel * |B|` of the
    /// budget (then the boundary users close the remaining gap).
    pub tol_rel: f64,
    /// Bisection steps per multiplier.
    pub max_bisection: usize,
    pub multi: MultiMethod,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_rel: 1e-6,
            max_bisection: 200,
            multi: MultiMethod::Nested,
        }
    }
}

/// Flat `N x D` objective and cost arrays of one scalar subproblem.
struct Problem<'a> {
    n: usize,
    d: usize,
    opts: &'a SolveOptions,
}

#[derive(Debug)]
struct Solved {
    assignment: Vec<Assignment>,
    lambda: Vec<f64>,
    /// Overspending end of the final bracket, and the weight on it that
    /// meets the budget in expectation.
    lambda_low: Vec<f64>,
    mix: f64,
    iterations: usize,
    converged: bool,
}

fn expected(assignment: &[Assignment], row: &[f64], d: usize) -> f64 {
    assignment
        .iter()
        .enumerate()
        .map(|(i, a)| a.expect(&row[i * d..(i + 1) * d]))
        .collect::<NeumaierSum>()
        .total()
}

impl Problem<'_> {
    fn choose(&self, f: &[f64], g: &[f64], lambda: f64) -> Vec<usize> {
        let d = self.d;
        (0..self.n)
            .into_par_iter()
            .map(|i| {
                let (fi, gi) = (&f[i * d..(i + 1) * d], &g[i * d..(i + 1) * d]);
                best_level(|j| fi[j] - lambda * gi[j], |j| gi[j], d)
            })
            .collect()
    }

    fn spend(&self, g: &[f64], choice: &[usize]) -> f64 {
        choice
            .iter()
            .enumerate()
            .map(|(i, &j)| g[i * self.d + j])
            .collect::<NeumaierSum>()
            .total()
    }

    /// Smallest multiplier at which every user sits on a cheapest level.
    fn lambda_bar(&self, f: &[f64], g: &[f64]) -> f64 {
        let d = self.d;
        (0..self.n)
            .map(|i| {
                let (fi, gi) = (&f[i * d..(i + 1) * d], &g[i * d..(i + 1) * d]);
                let gmin = gi.iter().cloned().fold(f64::INFINITY, f64::min);
                let fbest = (0..d)
                    .filter(|&j| gi[j] == gmin)
                    .map(|j| fi[j])
                    .fold(f64::NEG_INFINITY, f64::max);
                (0..d)
                    .filter(|&j| gi[j] > gmin)
                    .map(|j| (fi[j] - fbest) / (gi[j] - gmin))
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    fn scalar(&self, f: &[f64], g: &[f64], budget: f64, constraint: usize) -> Result<Solved> {
        let d = self.d;
        let min_spend: f64 = (0..self.n)
            .map(|i| g[i * d..(i + 1) * d].iter().cloned().fold(f64::INFINITY, f64::min))
            .collect::<NeumaierSum>()
            .total();
        if !within_budget(min_spend, budget) {
            return Err(Error::Infeasible {
                constraint,
                budget,
                min_spend,
            });
        }
        let free = self.choose(f, g, 0.0);
        if within_budget(self.spend(g, &free), budget) {
            return Ok(Solved {
                assignment: free.into_iter().map(Assignment::single).collect(),
                lambda: vec![0.0],
                lambda_low: vec![0.0],
                mix: 0.0,
                iterations: 0,
                converged: true,
            });
        }

        let mut hi = self.lambda_bar(f, g) * (1.0 + 1e-9) + f64::MIN_POSITIVE;
        let mut c_hi = self.choose(f, g, hi);
        let mut s_hi = self.spend(g, &c_hi);
        let mut doublings = 0;
        while !within_budget(s_hi, budget) {
            doublings += 1;
            if doublings > BRACKET_DOUBLINGS || !hi.is_finite() {
                return Err(Error::BracketFailure(format!(
                    "constraint {constraint}: spend {s_hi} still above budget {budget} at multiplier {hi}"
                )));
            }
            hi *= 2.0;
            c_hi = self.choose(f, g, hi);
            s_hi = self.spend(g, &c_hi);
        }

        let mut lo = 0.0;
        let mut s_lo = self.spend(g, &free);
        let mut c_lo = free;
        let mut iterations = 0;
        let mut converged = false;
        let stop_gap = self.opts.tol_rel * budget.abs();
        while iterations < self.opts.max_bisection {
            if hi - lo <= 1e-12 * hi || budget - s_hi <= stop_gap {
                converged = true;
                break;
            }
            iterations += 1;
            let mid = 0.5 * (lo + hi);
            let c = self.choose(f, g, mid);
            let s = self.spend(g, &c);
            if within_budget(s, budget) {
                hi = mid;
                c_hi = c;
                s_hi = s;
            } else {
                lo = mid;
                c_lo = c;
                s_lo = s;
            }
        }
        if !converged && (hi - lo <= 1e-12 * hi || budget - s_hi <= stop_gap) {
            converged = true;
        }

        let assignment = self.repair(f, g, budget, &c_lo, &c_hi, s_hi);
        Ok(Solved {
            assignment,
            lambda: vec![hi],
            lambda_low: vec![lo],
            mix: mix_weight(budget, s_lo, s_hi),
            iterations,
            converged,
        })
    }

    /// Moves users from their `hi` choice toward their `lo` choice, best
    /// response gain per unit cost first, until `budget` is spent.
    fn repair(&self, f: &[f64], g: &[f64], budget: f64, c_lo: &[usize], c_hi: &[usize], s_hi: f64) -> Vec<Assignment> {
        let d = self.d;
        let mut assignment: Vec<Assignment> = c_hi.iter().map(|&j| Assignment::single(j)).collect();
        let mut moves: Vec<(usize, f64, f64)> = (0..self.n)
            .filter(|&i| c_lo[i] != c_hi[i])
            .map(|i| {
                let (a, b) = (i * d + c_lo[i], i * d + c_hi[i]);
                (i, f[a] - f[b], g[a] - g[b])
            })
            .filter(|&(_, df, _)| df >= 0.0)
            .collect();
        let rank = |&(_, df, dg): &(usize, f64, f64)| if dg <= 0.0 { f64::INFINITY } else { df / dg };
        moves.sort_by(|a, b| rank(b).total_cmp(&rank(a)));
        let mut left = budget - s_hi;
        for (i, _, dg) in moves {
            if dg <= 0.0 {
                assignment[i] = Assignment::single(c_lo[i]);
                left -= dg;
            } else if dg <= left {
                assignment[i] = Assignment::single(c_lo[i]);
                left -= dg;
            } else {
                if left > 0.0 {
                    assignment[i] = Assignment::split(c_hi[i], c_lo[i], left / dg);
                }
                break;
            }
        }
        assignment
    }

    /// Exact solve of `max f . z` subject to every cost in `costs`.
    fn nested(&self, f: &[f64], costs: &[&[f64]], budgets: &[f64]) -> Result<Solved> {
        let last = costs.len() - 1;
        if last == 0 {
            return self.scalar(f, costs[0], budgets[0], 0);
        }
        let (g, budget) = (costs[last], budgets[last]);
        let inner = |lambda: f64| -> Result<Solved> {
            let adjusted: Vec<f64> = f.iter().zip(g).map(|(fv, gv)| fv - lambda * gv).collect();
            self.nested(&adjusted, &costs[..last], &budgets[..last])
        };
        let spend = |s: &Solved| expected(&s.assignment, g, self.d);

        let free = inner(0.0)?;
        if within_budget(spend(&free), budget) {
            let mut out = free;
            out.lambda.push(0.0);
            out.lambda_low.push(0.0);
            return Ok(out);
        }
        let negated: Vec<f64> = g.iter().map(|v| -v).collect();
        let cheapest = self.nested(&negated, &costs[..last], &budgets[..last])?;
        let min_spend = spend(&cheapest);
        if !within_budget(min_spend, budget) {
            return Err(Error::Infeasible {
                constraint: last,
                budget,
                min_spend,
            });
        }

        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let mut hi = 1.0 / gmax;
        let mut at_hi = inner(hi)?;
        let mut s_hi = spend(&at_hi);
        let mut iterations = free.iterations + cheapest.iterations + at_hi.iterations;
        let mut doublings = 0;
        while !within_budget(s_hi, budget) {
            doublings += 1;
            if doublings > BRACKET_DOUBLINGS {
                // The budget is only reachable in the limit; the cost-minimal
                // plan stands in for the infinite-multiplier end.
                at_hi = Solved {
                    lambda: cheapest.lambda.clone(),
                    ..cheapest
                };
                s_hi = min_spend;
                break;
            }
            hi *= 2.0;
            at_hi = inner(hi)?;
            iterations += at_hi.iterations;
            s_hi = spend(&at_hi);
        }

        let mut lo = 0.0;
        let mut at_lo = free;
        let mut s_lo = spend(&at_lo);
        let mut converged = false;
        let stop_gap = self.opts.tol_rel * budget.abs();
        for _ in 0..self.opts.max_bisection {
            if hi - lo <= 1e-12 * hi || budget - s_hi <= stop_gap {
                converged = true;
                break;
            }
            let mid = 0.5 * (lo + hi);
            let s = inner(mid)?;
            iterations += s.iterations + 1;
            let sp = spend(&s);
            if within_budget(sp, budget) {
                hi = mid;
                at_hi = s;
                s_hi = sp;
            } else {
                lo = mid;
                at_lo = s;
                s_lo = sp;
            }
        }
        converged |= hi - lo <= 1e-12 * hi || budget - s_hi <= stop_gap;

        let theta = mix_weight(budget, s_lo, s_hi);
        let assignment = at_lo
            .assignment
            .iter()
            .zip(&at_hi.assignment)
            .map(|(a, b)| Assignment::blend(a, b, theta))
            .collect();
        let mut lambda = at_hi.lambda;
        lambda.push(hi);
        let mut lambda_low = at_lo.lambda;
        lambda_low.push(lo);
        Ok(Solved {
            assignment,
            lambda,
            lambda_low,
            mix: theta,
            iterations,
            converged: converged && at_hi.converged,
        })
    }

    fn subgradient(&self, m: &ResponseMatrix, budgets: &[f64], iterations: usize, eta0: Option<f64>) -> Result<Solved> {
        let k = m.constraints();
        let gmax = (0..k)
            .flat_map(|c| m.g(c).iter())
            .fold(0.0f64, |a, v| a.max(v.abs()))
            .max(1e-300);
        let eta0 = eta0.unwrap_or(1.0 / gmax);
        let users = self.n.max(1) as f64;
        let mut lambda = vec![0.0; k];
        let mut best: Option<(bool, f64, Vec<f64>)> = None;
        for t in 1..=iterations {
            let plan = super::assign_given_lambda(m, &lambda)?;
            let excess: Vec<f64> = plan.spend.iter().zip(budgets).map(|(s, b)| s - b).collect();
            let feasible = plan.spend.iter().zip(budgets).all(|(s, b)| within_budget(*s, *b));
            let worst = excess.iter().zip(budgets).map(|(e, b)| e / b.abs().max(1.0)).fold(0.0, f64::max);
            let better = match &best {
                None => true,
                Some((bf, bv, _)) => match (feasible, *bf) {
                    (true, false) => true,
                    (false, true) => false,
                    (true, true) => plan.objective > *bv,
                    (false, false) => worst < *bv,
                },
            };
            if better {
                best = Some((feasible, if feasible { plan.objective } else { worst }, lambda.clone()));
            }
            let eta = eta0 / (t as f64).sqrt();
            for (l, e) in lambda.iter_mut().zip(&excess) {
                *l = (*l + eta * e / users).max(0.0);
            }
        }
        let mut lambda = best.map(|b| b.2).unwrap_or(lambda);

        // Sequential repair: re-solve each violated constraint's multiplier
        // with the others held fixed.
        let d = self.d;
        let mut assignment: Vec<Assignment> = super::assign_given_lambda(m, &lambda)?.assignment;
        for c in 0..k {
            let spend = expected(&assignment, m.g(c), d);
            if within_budget(spend, budgets[c]) {
                continue;
            }
            let f: Vec<f64> = (0..self.n * d)
                .map(|idx| {
                    let mut v = m.f()[idx];
                    for (o, l) in lambda.iter().enumerate() {
                        if o != c {
                            v -= l * m.g(o)[idx];
                        }
                    }
                    v
                })
                .collect();
            let fixed = self.scalar(&f, m.g(c), budgets[c], c)?;
            lambda[c] = fixed.lambda[0];
            assignment = fixed.assignment;
        }
        let violation: Vec<f64> = (0..k)
            .map(|c| (expected(&assignment, m.g(c), d) - budgets[c]).max(0.0))
            .collect();
        if violation.iter().zip(budgets).any(|(v, b)| *v > budget_tolerance(*b)) {
            return Err(Error::NoFeasiblePlan { lambda, violation });
        }
        Ok(Solved {
            assignment,
            lambda_low: lambda.clone(),
            lambda,
            mix: 0.0,
            iterations,
            converged: true,
        })
    }
}

/// Weight on the overspending end that brings expected spend to `budget`.
fn mix_weight(budget: f64, s_lo: f64, s_hi: f64) -> f64 {
    if s_lo - s_hi > 0.0 {
        ((budget - s_hi) / (s_lo - s_hi)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn finish(m: &ResponseMatrix, solved: Solved, budgets: Vec<f64>) -> (DualSolution, AllocationPlan) {
    let plan = AllocationPlan::from_assignment(m, solved.assignment, solved.lambda.clone());
    let dual = DualSolution {
        lambda: solved.lambda,
        lambda_low: solved.lambda_low,
        mix: solved.mix,
        converged: solved.converged,
        iterations: solved.iterations,
        spend: plan.spend.clone(),
        budgets,
        objective: plan.objective,
        matrix_checksum: m.checksum(),
        model_checksum: None,
    };
    (dual, plan)
}

fn check_budgets(m: &ResponseMatrix, budgets: &[f64]) -> Result<()> {
    if budgets.len() != m.constraints() {
        return Err(Error::invalid(format!(
            "{} budgets for {} cost kinds",
            budgets.len(),
            m.constraints()
        )));
    }
    if let Some(b) = budgets.iter().find(|b| !b.is_finite()) {
        return Err(Error::invalid(format!("budget {b} must be finite")));
    }
    Ok(())
}

/// Total-budget allocation for a matrix with one cost kind.
pub fn solve_dual_single(m: &ResponseMatrix, budget: f64, opts: &SolveOptions) -> Result<(DualSolution, AllocationPlan)> {
    if m.constraints() != 1 {
        return Err(Error::invalid(format!(
            "single-budget solve needs one cost kind, matrix has {}",
            m.constraints()
        )));
    }
    check_budgets(m, &[budget])?;
    let p = Problem {
        n: m.users(),
        d: m.levels(),
        opts,
    };
    let solved = p.scalar(m.f(), m.g(0), budget, 0)?;
    Ok(finish(m, solved, vec![budget]))
}

/// Allocation under one total budget per cost kind.
pub fn solve_dual_multi(m: &ResponseMatrix, budgets: &[f64], opts: &SolveOptions) -> Result<(DualSolution, AllocationPlan)> {
    check_budgets(m, budgets)?;
    let p = Problem {
        n: m.users(),
        d: m.levels(),
        opts,
    };
    let solved = match &opts.multi {
        MultiMethod::Nested => {
            let costs: Vec<&[f64]> = (0..m.constraints()).map(|k| m.g(k)).collect();
            p.nested(m.f(), &costs, budgets)?
        }
        MultiMethod::Subgradient { iterations, eta0 } => p.subgradient(m, budgets, *iterations, *eta0)?,
    };
    Ok(finish(m, solved, budgets.to_vec()))
}

/// Allocation with a per-user average budget `b_k` per cost kind: costs are
/// shifted by `-b_k` and the total shifted spend is held at or below zero.
/// The returned plan and diagnostics are in the original cost units, with
/// totals `N * b_k` as budgets.
pub fn solve_per_capita(m: &ResponseMatrix, per_capita: &[f64], opts: &SolveOptions) -> Result<(DualSolution, AllocationPlan)> {
    check_budgets(m, per_capita)?;
    let shifted = m.shifted(per_capita)?;
    let zeros = vec![0.0; per_capita.len()];
    let (dual, plan) = solve_dual_multi(&shifted, &zeros, opts)?;
    let plan = AllocationPlan::from_assignment(m, plan.assignment, plan.lambda);
    let n = m.users() as f64;
    let dual = DualSolution {
        spend: plan.spend.clone(),
        budgets: per_capita.iter().map(|b| b * n).collect(),
        objective: plan.objective,
        matrix_checksum: m.checksum(),
        ..dual
    };
    Ok((dual, plan))
}
