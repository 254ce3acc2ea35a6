//! Model and plan metrics.
//!
//! Curve metrics work per user on the predicted curve over the grid and are
//! averaged over users. Means use Neumaier-compensated summation in user
//! order, so results do not depend on how per-user work was parallelized.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocator::AllocationPlan;
use crate::model::loss::log_loss;
use crate::model::{IncentiveGrid, ResponseModel};
use crate::sum::NeumaierSum;
use crate::synthdata::{SyntheticPopulation, TrainingSample, MAX_INCENTIVE};
use crate::{Error, Result};

/// Two predictions closer than this count as equal.
pub const DEFAULT_EQ_TOL: f64 = 1e-9;

fn mean_of(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    crate::sum::mean(values)
}

/// Mean unweighted log loss of the model's prediction at each sample's
/// (rounded-down) incentive.
pub fn logloss_metric(model: &dyn ResponseModel, samples: &[TrainingSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Metric("log loss of an empty sample set".into()));
    }
    let n = model.vocab().len();
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let p = model.predict(&s.features[..n], f64::from(s.incentive))?;
            Ok(log_loss(p, s.label, 1.0))
        })
        .collect::<Result<_>>()?;
    Ok(mean_of(losses).expect("nonempty"))
}

/// Mann–Whitney AUC; tied scores contribute one half.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric("AUC needs both positive and negative samples".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of positive ranks, ties sharing their average rank.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let (p, q) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

pub fn auc_model(model: &dyn ResponseModel, samples: &[TrainingSample]) -> Result<f64> {
    let n = model.vocab().len();
    let scores: Vec<f64> = samples
        .par_iter()
        .map(|s| model.predict(&s.features[..n], f64::from(s.incentive)))
        .collect::<Result<_>>()?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    auc_roc(&scores, &labels)
}

/// Pair counts over all `a > b` level pairs of one curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairCounts {
    pub reversed: usize,
    pub equal: usize,
    pub concordant: usize,
}

impl PairCounts {
    pub fn total(&self) -> usize {
        self.reversed + self.equal + self.concordant
    }
}

pub fn pair_counts(curve: &[f64], eq_tol: f64) -> PairCounts {
    let mut c = PairCounts::default();
    for a in 0..curve.len() {
        for b in 0..a {
            if (curve[a] - curve[b]).abs() <= eq_tol {
                c.equal += 1;
            } else if curve[a] < curve[b] {
                c.reversed += 1;
            } else {
                c.concordant += 1;
            }
        }
    }
    c
}

/// Fraction of level pairs where the higher incentive predicts less.
pub fn rpr_curve(curve: &[f64], eq_tol: f64) -> f64 {
    let c = pair_counts(curve, eq_tol);
    c.reversed as f64 / c.total().max(1) as f64
}

/// Fraction of level pairs with equal predictions.
pub fn epr_curve(curve: &[f64], eq_tol: f64) -> f64 {
    let c = pair_counts(curve, eq_tol);
    c.equal as f64 / c.total().max(1) as f64
}

/// Largest population standard deviation of local slopes over windows
/// `[d_i - r, d_i + r]`, each collecting the slopes whose left endpoint
/// falls inside. `None` if every window holds fewer than two slopes.
pub fn mlss_curve(curve: &[f64], levels: &[f64], r: f64) -> Option<f64> {
    let slopes: Vec<(f64, f64)> = (0..curve.len().saturating_sub(1))
        .map(|j| (levels[j], (curve[j + 1] - curve[j]) / (levels[j + 1] - levels[j])))
        .collect();
    let mut best: Option<f64> = None;
    for &d in levels {
        let window: Vec<f64> = slopes
            .iter()
            .filter(|(left, _)| (left - d).abs() <= r)
            .map(|s| s.1)
            .collect();
        if window.len() < 2 {
            continue;
        }
        let m = window.len() as f64;
        let mean = window.iter().sum::<f64>() / m;
        let std = (window.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / m).sqrt();
        best = Some(best.map_or(std, |b: f64| b.max(std)));
    }
    best
}

/// Default MLSS window radius: two of the widest grid steps.
pub fn default_mlss_radius(grid: &IncentiveGrid) -> f64 {
    2.0 * grid.max_gap()
}

fn curves(model: &dyn ResponseModel, users: &[[usize; 3]]) -> Result<Vec<Vec<f64>>> {
    let n = model.vocab().len();
    users
        .par_iter()
        .enumerate()
        .map(|(i, x)| model.predict_curve(&x[..n]).map_err(|e| e.for_user(i)))
        .collect()
}

fn check_grid(grid: &IncentiveGrid) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::Metric("pair metrics need at least two grid levels".into()));
    }
    Ok(())
}

pub fn rpr(model: &dyn ResponseModel, users: &[[usize; 3]], eq_tol: f64) -> Result<f64> {
    check_grid(model.grid())?;
    let c = curves(model, users)?;
    mean_of(c.iter().map(|c| rpr_curve(c, eq_tol))).ok_or_else(|| Error::Metric("no users".into()))
}

pub fn epr(model: &dyn ResponseModel, users: &[[usize; 3]], eq_tol: f64) -> Result<f64> {
    check_grid(model.grid())?;
    let c = curves(model, users)?;
    mean_of(c.iter().map(|c| epr_curve(c, eq_tol))).ok_or_else(|| Error::Metric("no users".into()))
}

pub fn mlss(model: &dyn ResponseModel, users: &[[usize; 3]], r: f64) -> Result<f64> {
    let grid = model.grid();
    if grid.len() < 3 {
        return Err(Error::Metric("MLSS needs at least three grid levels".into()));
    }
    if !(r >= grid.max_gap()) {
        return Err(Error::Metric(format!(
            "MLSS radius {r} is below the widest grid step {}",
            grid.max_gap()
        )));
    }
    let c = curves(model, users)?;
    let per_user: Vec<f64> = c
        .iter()
        .map(|c| mlss_curve(c, grid.levels(), r))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Metric(format!("every MLSS window of radius {r} holds < 2 slopes; use a larger radius")))?;
    mean_of(per_user).ok_or_else(|| Error::Metric("no users".into()))
}

fn integer_level(grid: &IncentiveGrid, j: usize) -> Result<usize> {
    let d = grid.level(j);
    if d.fract() != 0.0 || !(0.0..=MAX_INCENTIVE as f64).contains(&d) {
        return Err(Error::invalid(format!(
            "ground truth is defined on integer incentives 0..={MAX_INCENTIVE}, grid has {d}"
        )));
    }
    Ok(d as usize)
}

/// Mean ground-truth response of the plan, in expectation over randomized
/// users.
pub fn future_response_synthetic(
    plan: &AllocationPlan,
    users: &[[usize; 3]],
    grid: &IncentiveGrid,
    population: &SyntheticPopulation,
) -> Result<f64> {
    if plan.users() != users.len() {
        return Err(Error::invalid(format!(
            "plan covers {} users, {} given",
            plan.users(),
            users.len()
        )));
    }
    let index: Vec<usize> = (0..grid.len()).map(|j| integer_level(grid, j)).collect::<Result<_>>()?;
    let values: Vec<f64> = plan
        .assignment
        .iter()
        .zip(users)
        .enumerate()
        .map(|(i, (a, x))| {
            let curve = population.curve(x).map_err(|e| e.for_user(i))?;
            let row: Vec<f64> = index.iter().map(|&p| curve.y[p]).collect();
            Ok(a.expect(&row))
        })
        .collect::<Result<_>>()?;
    mean_of(values).ok_or_else(|| Error::Metric("plan has no users".into()))
}

/// Mean expected face value handed out per user.
pub fn future_cost(plan: &AllocationPlan, grid: &IncentiveGrid) -> f64 {
    plan.mean_incentive(grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutEstimate {
    pub response: Option<f64>,
    pub cost: Option<f64>,
    pub matched_users: usize,
    pub excluded_users: usize,
    pub warning: Option<String>,
}

/// Estimates a plan's response and cost by averaging holdout records of the
/// same joint category at the same grid level. A user is excluded if any
/// level in its assignment has no matching record.
pub fn future_metrics_holdout(
    plan: &AllocationPlan,
    users: &[[usize; 3]],
    grid: &IncentiveGrid,
    holdout: &[TrainingSample],
) -> Result<HoldoutEstimate> {
    if plan.users() != users.len() {
        return Err(Error::invalid("plan and user list differ in length"));
    }
    let mut cells: HashMap<([usize; 3], usize), (f64, f64, f64)> = HashMap::new();
    for s in holdout {
        let j = grid.level_index(f64::from(s.incentive))?;
        let e = cells.entry((s.features, j)).or_insert((0.0, 0.0, 0.0));
        e.0 += 1.0;
        e.1 += f64::from(s.label);
        e.2 += f64::from(s.incentive);
    }
    let mut response = NeumaierSum::new();
    let mut cost = NeumaierSum::new();
    let mut matched = 0usize;
    for (a, x) in plan.assignment.iter().zip(users) {
        let support = a.support();
        let hits: Option<Vec<(f64, f64)>> = support
            .iter()
            .map(|&(l, p)| cells.get(&(*x, l)).map(|c| (p * c.1 / c.0, p * c.2 / c.0)))
            .collect();
        if let Some(h) = hits {
            matched += 1;
            response.add(h.iter().map(|v| v.0).sum());
            cost.add(h.iter().map(|v| v.1).sum());
        }
    }
    let excluded = users.len() - matched;
    let warning = (matched * 2 < users.len()).then(|| {
        format!(
            "only {matched} of {} users matched a holdout record; the estimate is unreliable",
            users.len()
        )
    });
    let denom = matched as f64;
    Ok(HoldoutEstimate {
        response: (matched > 0).then(|| response.total() / denom),
        cost: (matched > 0).then(|| cost.total() / denom),
        matched_users: matched,
        excluded_users: excluded,
        warning,
    })
}

/// Every metric for one model (and optionally its plan).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub logloss: f64,
    pub auc_roc: f64,
    pub rpr: f64,
    pub epr: f64,
    pub mlss: f64,
    pub future_response: Option<f64>,
    pub future_cost: Option<f64>,
    /// `max(0, future_cost - budget per capita)`.
    pub future_cost_excess: Option<f64>,
    pub samples: usize,
    pub users: usize,
    pub grid: Vec<f64>,
    pub mlss_radius: f64,
    pub eq_tol: f64,
    pub budget_per_capita: Option<f64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub eq_tol: f64,
    /// `None` uses [`default_mlss_radius`].
    pub mlss_radius: Option<f64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            eq_tol: DEFAULT_EQ_TOL,
            mlss_radius: None,
        }
    }
}

/// Fit metrics on `samples` and curve metrics over `users`; plan metrics
/// are filled in separately.
pub fn evaluate_model(
    name: &str,
    model: &dyn ResponseModel,
    samples: &[TrainingSample],
    users: &[[usize; 3]],
    settings: &EvalSettings,
) -> Result<MetricsReport> {
    let r = settings.mlss_radius.unwrap_or_else(|| default_mlss_radius(model.grid()));
    Ok(MetricsReport {
        model: name.to_string(),
        logloss: logloss_metric(model, samples)?,
        auc_roc: auc_model(model, samples)?,
        rpr: rpr(model, users, settings.eq_tol)?,
        epr: epr(model, users, settings.eq_tol)?,
        mlss: mlss(model, users, r)?,
        future_response: None,
        future_cost: None,
        future_cost_excess: None,
        samples: samples.len(),
        users: users.len(),
        grid: model.grid().levels().to_vec(),
        mlss_radius: r,
        eq_tol: settings.eq_tol,
        budget_per_capita: None,
        warnings: Vec::new(),
    })
}

impl MetricsReport {
    pub fn set_future(&mut self, response: f64, cost: f64, budget_per_capita: Option<f64>) {
        self.future_response = Some(response);
        self.future_cost = Some(cost);
        self.budget_per_capita = budget_per_capita;
        self.future_cost_excess = budget_per_capita.map(|b| (cost - b).max(0.0));
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

/// Side-by-side text table with one column per report.
pub fn format_table(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<18}", "metric");
    for r in reports {
        let _ = write!(out, "{:>14}", r.model);
    }
    out.push('\n');
    let rows: [(&str, fn(&MetricsReport) -> String); 8] = [
        ("LogLoss", |r| format!("{:.6}", r.logloss)),
        ("AUC-ROC", |r| format!("{:.6}", r.auc_roc)),
        ("RPR", |r| format!("{:.6}", r.rpr)),
        ("EPR", |r| format!("{:.6}", r.epr)),
        ("MLSS", |r| format!("{:.6}", r.mlss)),
        ("Future response", |r| fmt_opt(r.future_response)),
        ("Future cost", |r| fmt_opt(r.future_cost)),
        ("Future cost error", |r| fmt_opt(r.future_cost_excess)),
    ];
    for (label, f) in rows {
        let _ = write!(out, "{label:<18}");
        for r in reports {
            let _ = write!(out, "{:>14}", f(r));
        }
        out.push('\n');
    }
    if let Some(r) = reports.first() {
        let _ = writeln!(
            out,
            "# grid {:?}; mlss radius r = {}; eq_tol = {:e}; samples {}; users {}",
            r.grid, r.mlss_radius, r.eq_tol, r.samples, r.users
        );
        if let Some(b) = r.budget_per_capita {
            let _ = writeln!(out, "# budget per capita {b}");
        }
    }
    for r in reports {
        for w in &r.warnings {
            let _ = writeln!(out, "# warning ({}): {w}", r.model);
        }
    }
    out
}

/// Per-user predicted curves as CSV: `user,x0,x1,x2,level_0..level_{D-1}`.
pub fn write_curves_csv<W: Write>(mut w: W, model: &dyn ResponseModel, users: &[[usize; 3]]) -> Result<()> {
    let grid = model.grid();
    write!(w, "user,x0,x1,x2")?;
    for l in grid.levels() {
        write!(w, ",{l}")?;
    }
    writeln!(w)?;
    for (i, (x, c)) in users.iter().zip(curves(model, users)?).enumerate() {
        write!(w, "{i},{},{},{}", x[0], x[1], x[2])?;
        for v in c {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
