//! End-to-end acceptance checks, one pass/fail line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so each criterion reports its
//! measured values even when an earlier one fails. Exits nonzero if any
//! criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{check, jitter, random_budget, random_matrix, random_points, rel_gap, TOL};
use promo_core::allocator::{
    assign_given_dual, assign_given_lambda, build_matrix, solve_dual_multi, solve_dual_single, solve_exact_small, solve_per_capita,
    CostModel, SolveOptions,
};
use promo_core::biascorrect::{attach_weights, fit_propensity, BucketSpec, DEFAULT_CLIP_MAX, DEFAULT_SMOOTHING};
use promo_core::eval::{
    auc_roc, epr_curve, future_response_synthetic, logloss_metric, mlss, mlss_curve, rpr, rpr_curve,
    default_mlss_radius, DEFAULT_EQ_TOL,
};
use promo_core::experiment::{
    preset, run_pipeline, train_model, users_of, ModelKind, ModelSpec, PipelineConfig, Seeds,
};
use promo_core::model::{alpha_schedule, DipnArch, DipnModel, IncentiveGrid, MlpArch, MlpModel, ResponseModel, TrainConfig};
use promo_core::synthdata::{draw_biased_dataset, draw_cohort, gen_population, TrainingSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 5;
const PER_CAPITA: f64 = 11.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn grid() -> IncentiveGrid {
    IncentiveGrid::stride(100, 10).unwrap()
}

fn fmt(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Random and trained isotonic networks never predict less for more.
fn monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let vocab = preset("synthetic2").unwrap().to_vec();
    let users: Vec<[usize; 3]> = (0..1000)
        .map(|_| [rng.gen_range(0..vocab[0]), rng.gen_range(0..vocab[1]), rng.gen_range(0..vocab[2])])
        .collect();
    let mut models = Vec::new();
    for seed in 0..4 {
        let hidden = [vec![], vec![16], vec![8, 4], vec![32]][seed as usize].clone();
        let mut m = DipnModel::new(grid(), vocab.clone(), DipnArch { embed_dim: 8, hidden }, seed).unwrap();
        // Large random parameters exercise saturated and dead regions too.
        for t in m.tensors_mut() {
            for v in &mut t.data {
                *v = rng.gen_range(-3.0..3.0);
            }
        }
        models.push(m);
    }
    let train: Vec<TrainingSample> = {
        let pop = gen_population(3, 5, 7, 3).unwrap();
        promo_core::synthdata::draw_dataset_total(&pop, 5000, 4)
    };
    let (trained, _) = train_model(ModelKind::Dipn, &grid(), &vocab, &train, None, &ModelSpec::default(), 5).unwrap();
    let promo_core::model::AnyModel::Dipn(trained) = trained else {
        unreachable!()
    };
    models.push(trained);

    let mut violations = 0usize;
    let mut worst_rpr: f64 = 0.0;
    for m in &models {
        for u in &users {
            let c = m.predict_curve(u).unwrap();
            violations += c.windows(2).filter(|w| !(w[1] >= w[0])).count();
        }
        worst_rpr = worst_rpr.max(rpr(m, &users, DEFAULT_EQ_TOL).unwrap());
    }
    outcome(
        violations == 0 && worst_rpr == 0.0,
        format!(
            "{} models x {} users: {violations} decreasing steps, max RPR {worst_rpr}",
            models.len(),
            users.len()
        ),
    )
}

/// Analytic loss gradients match central differences.
fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let vocab = vec![2, 3, 2];
    let grid = IncentiveGrid::new(vec![0.0, 1.0, 2.0]).unwrap();
    let (mut worst_dipn, mut worst_mlp): (f64, f64) = (0.0, 0.0);
    for seed in 0..20u64 {
        let hidden = [vec![], vec![3], vec![3, 2]][seed as usize % 3].clone();
        let mut d = DipnModel::new(grid.clone(), vocab.clone(), DipnArch { embed_dim: 2, hidden }, seed).unwrap();
        jitter(d.tensors_mut(), &mut rng);
        let pts = random_points(&mut rng, &vocab, 3, 8);
        let alpha = rng.gen_range(0.0..2.0);
        let eps = TrainConfig::default().smooth_eps;
        let (_, g) = d.loss_and_grad(&pts, alpha, eps);
        worst_dipn = worst_dipn.max(check(&d, &g, |m| m.tensors_mut(), |m| m.total_loss(&pts, alpha, eps)));

        let mut m = MlpModel::new(grid.clone(), vocab.clone(), MlpArch { embed_dim: 2, hidden: vec![4, 3] }, seed).unwrap();
        jitter(m.tensors_mut(), &mut rng);
        let pts = random_points(&mut rng, &vocab, 3, 8);
        let (_, g) = m.loss_and_grad(&pts);
        worst_mlp = worst_mlp.max(check(&m, &g, |m| m.tensors_mut(), |m| m.total_loss(&pts)));
    }
    outcome(
        worst_dipn < TOL && worst_mlp < TOL,
        format!("20 instances each, h = 1e-5: max relative error dipn {worst_dipn:.2e}, mlp {worst_mlp:.2e} (< {TOL:e})"),
    )
}

/// Dual plans reach the LP optimum of small instances.
fn lp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let opts = SolveOptions::default();
    let (mut worst_single, mut worst_violation, mut worst_multi): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for case in 0..50 {
        let n = rng.gen_range(1..=8);
        let d = rng.gen_range(2..=5);
        let m = random_matrix(&mut rng, n, d, 1, case % 2 == 0);
        let b = random_budget(&mut rng, &m, 0);
        let exact = solve_exact_small(&m, &[b]).unwrap();
        let (_, plan) = solve_dual_single(&m, b, &opts).unwrap();
        worst_single = worst_single.max(rel_gap(plan.objective, exact.lp_objective));
        worst_violation = worst_violation.max(plan.spend[0] - b);
    }
    for case in 0..50 {
        let n = rng.gen_range(1..=6);
        let d = rng.gen_range(2..=4);
        let m = random_matrix(&mut rng, n, d, 2, case % 2 == 0);
        let budgets = [random_budget(&mut rng, &m, 0), random_budget(&mut rng, &m, 1)];
        let Ok(exact) = solve_exact_small(&m, &budgets) else {
            continue;
        };
        let (_, plan) = solve_dual_multi(&m, &budgets, &opts).unwrap();
        worst_multi = worst_multi.max(rel_gap(plan.objective, exact.lp_objective));
        for k in 0..2 {
            worst_violation = worst_violation.max(plan.spend[k] - budgets[k]);
        }
    }
    outcome(
        worst_single <= 1e-6 && worst_violation <= 1e-9 && worst_multi < 1e-3,
        format!(
            "single: max gap {worst_single:.2e} (<= 1e-6); K=2: max gap {worst_multi:.2e} (< 1e-3); max overspend {worst_violation:.2e} (<= 1e-9)"
        ),
    )
}

/// Directional comparison of plan quality on a synthetic preset.
fn synthetic_table(name: &str, require_wins: bool) -> Outcome {
    let mut dipn_resp = Vec::new();
    let mut mlp_resp = Vec::new();
    let mut dipn_cost = Vec::new();
    for seed in 0..SEEDS {
        let cfg = PipelineConfig::preset(name, seed).unwrap();
        let out = run_pipeline(&cfg, &[ModelKind::Dipn, ModelKind::Mlp]).unwrap();
        dipn_resp.push(out.runs[0].report.future_response.unwrap());
        dipn_cost.push(out.runs[0].report.future_cost.unwrap());
        mlp_resp.push(out.runs[1].report.future_response.unwrap());
    }
    let (md, mm, mc) = (median(dipn_resp.clone()), median(mlp_resp.clone()), median(dipn_cost.clone()));
    let wins = dipn_resp.iter().zip(&mlp_resp).filter(|(d, m)| d > m).count();
    let mut pass = md >= mm - 0.005 && mc <= PER_CAPITA * 1.02;
    if require_wins {
        pass &= wins >= 4;
    }
    outcome(
        pass,
        format!(
            "median future response dipn {md:.4} vs mlp {mm:.4} (need >= mlp - 0.005), median dipn cost {mc:.3} (<= {:.2}), dipn wins {wins}/{SEEDS}{}; per seed dipn {} mlp {}",
            PER_CAPITA * 1.02,
            if require_wins { " (need >= 4)" } else { "" },
            fmt(&dipn_resp),
            fmt(&mlp_resp)
        ),
    )
}

/// Inverse propensity weights improve plans learned from biased logs.
fn ips_end_to_end() -> Outcome {
    const BIAS: f64 = 5.0;
    let grid = grid();
    let mut weighted = Vec::new();
    let mut plain = Vec::new();
    for seed in 0..SEEDS {
        let seeds = Seeds::from_run(seed);
        let pop = gen_population(2, 2, 2, seeds.population).unwrap();
        let logged = draw_biased_dataset(&pop, BIAS, seeds.data).unwrap().samples;
        let table = fit_propensity(&logged, &grid, &BucketSpec::joint(), DEFAULT_SMOOTHING).unwrap();
        let ips = attach_weights(&logged, &table, DEFAULT_CLIP_MAX).unwrap();
        // Plans are scored on the logged cohort itself.
        let users = users_of(&logged);
        for (samples, out) in [(&ips, &mut weighted), (&logged, &mut plain)] {
            let (model, _) = train_model(ModelKind::Dipn, &grid, &pop.n, samples, None, &ModelSpec::default(), seeds.model).unwrap();
            let m = build_matrix(model.as_response(), &users, &[CostModel::FaceValue]).unwrap();
            let (_, plan) = solve_per_capita(&m, &[PER_CAPITA], &SolveOptions::default()).unwrap();
            out.push(future_response_synthetic(&plan, &users, &grid, &pop).unwrap());
        }
    }
    let wins = weighted.iter().zip(&plain).filter(|(w, p)| w > p).count();
    outcome(
        wins >= 4,
        format!(
            "bias strength {BIAS}: weighted beats unweighted in {wins}/{SEEDS} (need >= 4); weighted {} unweighted {}",
            fmt(&weighted),
            fmt(&plain)
        ),
    )
}

/// The smoothness penalty lowers the local slope spread on sparse data.
fn smoothness_effect() -> Outcome {
    let grid = grid();
    let mut smooth = Vec::new();
    let mut free = Vec::new();
    for seed in 0..SEEDS {
        let cfg = PipelineConfig::preset("synthetic1", seed).unwrap();
        let pop = gen_population(2, 2, 2, cfg.seeds.population).unwrap();
        let data = promo_core::synthdata::draw_dataset_total(&pop, cfg.splits.iter().sum(), cfg.seeds.data);
        let splits = promo_core::experiment::split(data, cfg.splits).unwrap();
        let sparse = &splits.train[..splits.train.len() / 10];
        let users = users_of(&splits.test);
        for (alpha, out) in [(10.0, &mut smooth), (0.0, &mut free)] {
            let spec = ModelSpec {
                train: TrainConfig {
                    alpha_upper: alpha,
                    alpha_lower: alpha,
                    ..TrainConfig::default()
                },
                ..ModelSpec::default()
            };
            let (model, _) = train_model(ModelKind::Dipn, &grid, &pop.n, sparse, None, &spec, cfg.seeds.model).unwrap();
            out.push(mlss(model.as_response(), &users, default_mlss_radius(&grid)).unwrap());
        }
    }
    let wins = smooth.iter().zip(&free).filter(|(s, f)| s < f).count();
    outcome(
        wins >= 4,
        format!(
            "MLSS with alpha 10 lower than alpha 0 in {wins}/{SEEDS} (need >= 4); alpha 10 {} alpha 0 {}",
            fmt(&smooth),
            fmt(&free)
        ),
    )
}

/// A multiplier solved on one cohort transfers to an i.i.d. cohort.
fn dual_reuse() -> Outcome {
    let cfg = PipelineConfig::preset("synthetic2", 0).unwrap();
    let pop = gen_population(3, 5, 7, cfg.seeds.population).unwrap();
    let data = promo_core::synthdata::draw_dataset_total(&pop, cfg.splits.iter().sum(), cfg.seeds.data);
    let splits = promo_core::experiment::split(data, cfg.splits).unwrap();
    let (model, _) = train_model(
        ModelKind::Dipn,
        &cfg.grid,
        &pop.n,
        &splits.train,
        Some(&splits.validation),
        &cfg.model,
        cfg.seeds.model,
    )
    .unwrap();
    let opts = SolveOptions::default();
    let mut deviations = Vec::new();
    let mut strict = Vec::new();
    for pair in 0..10u64 {
        let a = draw_cohort(&pop, cfg.seeds.data, 2000, 500 + 2 * pair);
        let b = draw_cohort(&pop, cfg.seeds.data, 2000, 501 + 2 * pair);
        let ma = build_matrix(model.as_response(), &a, &[CostModel::FaceValue]).unwrap();
        let mb = build_matrix(model.as_response(), &b, &[CostModel::FaceValue]).unwrap();
        let (dual_a, _) = solve_per_capita(&ma, &[PER_CAPITA], &opts).unwrap();
        let (_, own) = solve_per_capita(&mb, &[PER_CAPITA], &opts).unwrap();
        let n = b.len() as f64;
        let reused = assign_given_dual(&mb, &dual_a).unwrap();
        deviations.push(rel_gap(reused.spend[0] / n, own.spend[0] / n));
        let argmax_only = assign_given_lambda(&mb, &dual_a.lambda).unwrap();
        strict.push(rel_gap(argmax_only.spend[0] / n, own.spend[0] / n));
    }
    let mean = strict.iter().sum::<f64>() / strict.len() as f64;
    let mixed_mean = deviations.iter().sum::<f64>() / deviations.len() as f64;
    outcome(
        mean <= 0.05,
        format!(
            "10 pairs of 2000 users: mean relative spend deviation {:.2}% (<= 5%), max {:.2}%; \
             with the stored boundary split: mean {:.2}%",
            100.0 * mean,
            100.0 * strict.iter().cloned().fold(0.0, f64::max),
            100.0 * mixed_mean
        ),
    )
}

struct Constant(IncentiveGrid, Vec<usize>, f64);

impl ResponseModel for Constant {
    fn grid(&self) -> &IncentiveGrid {
        &self.0
    }
    fn vocab(&self) -> &[usize] {
        &self.1
    }
    fn predict_level(&self, _x: &[usize], _level: usize) -> promo_core::Result<f64> {
        Ok(self.2)
    }
}

fn metric_units() -> Outcome {
    const EXACT: f64 = 1e-12;
    let half = Constant(grid(), vec![2, 2, 2], 0.5);
    let samples: Vec<TrainingSample> = (0..10)
        .map(|i| TrainingSample::new([i % 2, 0, 1], 10 * i as u32, (i % 3 == 0) as u8))
        .collect();
    let ll = logloss_metric(&half, &samples).unwrap();
    let auc = auc_roc(&[0.1, 0.3, 0.35, 0.8, 0.9], &[0, 0, 0, 1, 1]).unwrap();
    let r = rpr_curve(&[0.2, 0.1, 0.3, 0.4], DEFAULT_EQ_TOL);
    let e = epr_curve(&[0.2, 0.2, 0.3, 0.4], DEFAULT_EQ_TOL);
    let levels = grid().levels().to_vec();
    let linear: Vec<f64> = levels.iter().map(|l| 0.1 + 0.007 * l).collect();
    let m = mlss_curve(&linear, &levels, default_mlss_radius(&grid())).unwrap();
    let cfg = TrainConfig {
        alpha_upper: 1.0,
        alpha_lower: 0.01,
        alpha_decay: 1e-3,
        ..TrainConfig::default()
    };
    let a = alpha_schedule(&cfg, 500);
    let checks = [
        ("logloss", ll, std::f64::consts::LN_2),
        ("auc", auc, 1.0),
        ("rpr", r, 1.0 / 6.0),
        ("epr", e, 1.0 / 6.0),
        ("mlss", m, 0.0),
        ("alpha", a, 0.5),
    ];
    let failed: Vec<&str> = checks
        .iter()
        .filter(|(_, got, want)| !((got - want).abs() <= EXACT))
        .map(|c| c.0)
        .collect();
    outcome(
        failed.is_empty(),
        format!(
            "logloss {ll} (ln 2), auc {auc}, rpr {r}, epr {e}, mlss {m:e}, alpha {a}{}",
            if failed.is_empty() {
                String::new()
            } else {
                format!("; off: {failed:?}")
            }
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("monotonicity exactness", monotonicity),
        ("gradient correctness", gradients),
        ("LP oracle equivalence", lp_oracle),
        ("synthetic1 plan quality", || synthetic_table("synthetic1", false)),
        ("synthetic2 plan quality", || synthetic_table("synthetic2", true)),
        ("IPS end-to-end", ips_end_to_end),
        ("smoothness regularizer effect", smoothness_effect),
        ("dual reuse stability", dual_reuse),
        ("metric unit checks", metric_units),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        if !o.pass {
            failures += 1;
        }
        println!(
            "criterion {} {}: {} ({:.1}s) {}",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
