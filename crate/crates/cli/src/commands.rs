//! The subcommands. Every artifact lives in the run directory under a
//! fixed name; model-specific files carry the model kind.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use promo_core::allocator::{
    build_matrix, online_decide, read_dual, read_plan, solve_dual_multi, solve_dual_single, solve_per_capita, write_dual,
    write_plan, CostModel,
};
use promo_core::biascorrect::{attach_weights, fit_propensity, weights_from_logged, BucketSpec};
use promo_core::eval::{
    evaluate_model, format_table, future_cost, future_metrics_holdout, future_response_synthetic, write_curves_csv,
    MetricsReport,
};
use promo_core::experiment::{split, split_proportional, train_model, users_of, ModelKind};
use promo_core::model::train::write_log;
use promo_core::model::{load_model, model_checksum, save_model, AnyModel, TrainConfig};
use promo_core::synthdata::{
    draw_biased_dataset, draw_dataset_total, gen_population, read_dataset, write_dataset, SyntheticPopulation,
    TrainingSample,
};
use serde_json::json;

use crate::config::{Budget, PropensitySource, RunConfig};
use crate::UsageError;

const POPULATION: &str = "population.json";
const SPLITS: [&str; 3] = ["train.jsonl", "validation.jsonl", "test.jsonl"];
const PROPENSITY: &str = "propensity.json";

/// Fails with every missing path listed at once.
fn require(paths: &[&Path]) -> anyhow::Result<()> {
    let missing: Vec<String> = paths
        .iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(UsageError(format!("missing input(s): {}", missing.join(", "))).into())
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn read_split(path: &Path) -> anyhow::Result<Vec<TrainingSample>> {
    read_dataset(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn load(path: &Path) -> anyhow::Result<AnyModel> {
    Ok(load_model(open(path)?).with_context(|| format!("reading {}", path.display()))?.0)
}

fn emit(json: bool, value: serde_json::Value, text: String) {
    if json {
        println!("{}", serde_json::to_string(&value).expect("serializable"));
    } else {
        print!("{text}");
    }
}

/// Every feature must index into the configured vocabulary.
fn check_vocab(samples: &[TrainingSample], vocab: &[usize; 3], what: &str) -> anyhow::Result<()> {
    for (i, s) in samples.iter().enumerate() {
        for (f, (&v, &size)) in s.features.iter().zip(vocab).enumerate() {
            if v >= size {
                return Err(anyhow::Error::new(promo_core::Error::OutOfVocabulary { feature: f, value: v, size })
                    .context(format!("{what} record {i}")));
            }
        }
    }
    Ok(())
}

pub fn gen(cfg: &RunConfig, force: bool, json: bool) -> anyhow::Result<()> {
    let pop_path = cfg.file(POPULATION);
    let split_paths: Vec<PathBuf> = SPLITS.iter().map(|s| cfg.file(s)).collect();
    if !force {
        let existing: Vec<String> = std::iter::once(&pop_path)
            .chain(&split_paths)
            .filter(|p| p.exists())
            .map(|p| p.display().to_string())
            .collect();
        if !existing.is_empty() {
            return Err(UsageError(format!(
                "refusing to overwrite {} (pass --force)",
                existing.join(", ")
            ))
            .into());
        }
    }
    std::fs::create_dir_all(&cfg.paths.dir)
        .with_context(|| format!("cannot create {}", cfg.paths.dir.display()))?;
    let [n1, n2, n3] = cfg.population_shape();
    let seeds = cfg.seeds();
    let pop = gen_population(n1, n2, n3, seeds.population)?;
    let splits = if cfg.data.bias_strength > 0.0 {
        let logged = draw_biased_dataset(&pop, cfg.data.bias_strength, seeds.data)?;
        split_proportional(logged.samples, cfg.data.splits, seeds.data)?
    } else {
        let data = draw_dataset_total(&pop, cfg.data.splits.iter().sum(), seeds.data);
        split(data, cfg.data.splits)?
    };
    let mut w = create(&pop_path)?;
    pop.write_json(&mut w)?;
    w.flush()?;
    for (path, samples) in split_paths.iter().zip([&splits.train, &splits.validation, &splits.test]) {
        let mut w = create(path)?;
        write_dataset(&mut w, samples)?;
        w.flush()?;
    }
    let sizes = [splits.train.len(), splits.validation.len(), splits.test.len()];
    emit(
        json,
        json!({
            "command": "gen",
            "dir": cfg.paths.dir,
            "population": [n1, n2, n3],
            "categories": pop.categories(),
            "splits": sizes,
            "bias_strength": cfg.data.bias_strength,
            "seeds": seeds,
        }),
        format!(
            "population ({n1}, {n2}, {n3}): {} categories\nsplits train/validation/test: {} / {} / {}\nwritten to {}\n",
            pop.categories(),
            sizes[0],
            sizes[1],
            sizes[2],
            cfg.paths.dir.display()
        ),
    );
    Ok(())
}

pub fn train(cfg: &RunConfig, json: bool) -> anyhow::Result<()> {
    let (train_path, valid_path) = (cfg.file(SPLITS[0]), cfg.file(SPLITS[1]));
    require(&[&train_path, &valid_path])?;
    let kind = cfg.model.kind;
    let vocab = cfg.population_shape();
    let grid = cfg.grid()?;
    let mut train = read_split(&train_path)?;
    let valid = read_split(&valid_path)?;
    check_vocab(&train, &vocab, "training")?;
    check_vocab(&valid, &vocab, "validation")?;

    let bc = &cfg.bias_correction;
    if bc.enabled {
        train = match bc.source {
            PropensitySource::Fitted => {
                let bucket = BucketSpec::new(bc.bucket.clone()).map_err(|e| UsageError(format!("bias_correction: {e}")))?;
                let table = fit_propensity(&train, &grid, &bucket, bc.smoothing)?;
                let mut w = create(&cfg.file(PROPENSITY))?;
                table.write_json(&mut w)?;
                w.flush()?;
                attach_weights(&train, &table, bc.clip_max)?
            }
            PropensitySource::Logged => weights_from_logged(&train, bc.clip_max)?,
        };
    }

    let seed = cfg.seeds().model;
    let (model, log) = train_model(kind, &grid, &vocab, &train, Some(&valid), &cfg.model_spec(), seed)?;
    let used = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let model_path = cfg.kind_file("model", kind, "json");
    let mut w = create(&model_path)?;
    save_model(&mut w, &model, Some(&used))?;
    w.flush()?;
    let mut w = create(&cfg.kind_file("train-log", kind, "jsonl"))?;
    write_log(&mut w, &log)?;
    w.flush()?;

    let last = log.last();
    emit(
        json,
        json!({
            "command": "train",
            "model": kind.name(),
            "epochs": log.len(),
            "train_loss": last.map(|e| e.train_loss),
            "validation_loss": last.and_then(|e| e.validation_loss),
            "ips": bc.enabled,
            "checksum": model_checksum(&model),
        }),
        format!(
            "trained {} for {} epochs: train loss {:.6}, validation loss {}\nmodel written to {}\n",
            kind.name(),
            log.len(),
            last.map_or(f64::NAN, |e| e.train_loss),
            last.and_then(|e| e.validation_loss)
                .map_or_else(|| "-".to_string(), |v| format!("{v:.6}")),
            model_path.display()
        ),
    );
    Ok(())
}

pub fn allocate(cfg: &RunConfig, json: bool) -> anyhow::Result<()> {
    let kind = cfg.model.kind;
    let (model_path, test_path) = (cfg.kind_file("model", kind, "json"), cfg.file(SPLITS[2]));
    require(&[&model_path, &test_path])?;
    let model = load(&model_path)?;
    let users = users_of(&read_split(&test_path)?);
    let costs = cfg.budget.cost_models();
    let m = build_matrix(model.as_response(), &users, &costs)?;
    let (mut dual, plan) = match cfg.budget.budget() {
        Budget::PerCapita(b) => solve_per_capita(&m, b, &cfg.solve)?,
        Budget::Total(b) if b.len() == 1 => solve_dual_single(&m, b[0], &cfg.solve)?,
        Budget::Total(b) => solve_dual_multi(&m, b, &cfg.solve)?,
    };
    dual.model_checksum = Some(model_checksum(&model));
    let mut w = create(&cfg.kind_file("plan", kind, "jsonl"))?;
    write_plan(&mut w, &plan, &m)?;
    w.flush()?;
    let mut w = create(&cfg.kind_file("dual", kind, "json"))?;
    write_dual(&mut w, &dual)?;
    w.flush()?;

    let n = users.len() as f64;
    let per_capita: Vec<f64> = plan.spend.iter().map(|s| s / n).collect();
    emit(
        json,
        json!({
            "command": "allocate",
            "model": kind.name(),
            "users": users.len(),
            "lambda": dual.lambda,
            "spend": plan.spend,
            "spend_per_capita": per_capita,
            "budgets": dual.budgets,
            "objective": plan.objective,
            "boundary_users": plan.boundary_users(),
            "converged": dual.converged,
        }),
        format!(
            "{} users, lambda {:?}\nspend per capita {:?} (budgets {:?} total)\nexpected response per capita {:.6}, {} randomized user(s)\n",
            users.len(),
            dual.lambda,
            per_capita,
            dual.budgets,
            plan.objective / n,
            plan.boundary_users()
        ),
    );
    Ok(())
}

fn budget_per_capita(cfg: &RunConfig, users: usize) -> Option<f64> {
    if cfg.budget.cost_models().first() != Some(&CostModel::FaceValue) {
        return None;
    }
    match cfg.budget.budget() {
        Budget::PerCapita(b) => b.first().copied(),
        Budget::Total(b) => b.first().map(|t| t / users.max(1) as f64),
    }
}

pub fn evaluate(cfg: &RunConfig, json: bool) -> anyhow::Result<()> {
    let kind = cfg.model.kind;
    let model_path = cfg.kind_file("model", kind, "json");
    let plan_path = cfg.kind_file("plan", kind, "jsonl");
    let test_path = cfg.file(SPLITS[2]);
    let pop_path = cfg.file(POPULATION);
    require(&[&model_path, &plan_path, &test_path])?;
    let model = load(&model_path)?;
    let plan = read_plan(open(&plan_path)?).with_context(|| format!("reading {}", plan_path.display()))?;
    let test = read_split(&test_path)?;
    let users = users_of(&test);
    let grid = model.as_response().grid().clone();

    let mut report = evaluate_model(kind.name(), model.as_response(), &test, &users, &cfg.metrics.settings())?;
    let budget = budget_per_capita(cfg, users.len());
    if pop_path.exists() && !cfg.metrics.holdout {
        let pop: SyntheticPopulation = SyntheticPopulation::read_json(open(&pop_path)?)?;
        let response = future_response_synthetic(&plan, &users, &grid, &pop)?;
        report.set_future(response, future_cost(&plan, &grid), budget);
    } else {
        let est = future_metrics_holdout(&plan, &users, &grid, &test)?;
        if let (Some(r), Some(c)) = (est.response, est.cost) {
            report.set_future(r, c, budget);
        }
        report.warnings.push(format!(
            "future metrics from holdout matching: {} users matched, {} excluded",
            est.matched_users, est.excluded_users
        ));
        report.warnings.extend(est.warning);
    }

    let table = format_table(std::slice::from_ref(&report));
    let mut w = create(&cfg.kind_file("report", kind, "txt"))?;
    w.write_all(table.as_bytes())?;
    w.flush()?;
    let mut w = create(&cfg.kind_file("report", kind, "json"))?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    let mut w = create(&cfg.kind_file("curves", kind, "csv"))?;
    write_curves_csv(&mut w, model.as_response(), &users)?;
    w.flush()?;

    emit(json, serde_json::to_value(&report)?, table);
    Ok(())
}

fn parse_features(text: &str, width: usize) -> Result<Vec<usize>, UsageError> {
    let values: Result<Vec<usize>, _> = text.split(',').map(|v| v.trim().parse::<usize>()).collect();
    match values {
        Ok(v) if v.len() == width => Ok(v),
        Ok(v) => Err(UsageError(format!("expected {width} comma-separated features, got {}", v.len()))),
        Err(e) => Err(UsageError(format!("malformed features {text:?}: {e}"))),
    }
}

pub fn decide(cfg: &RunConfig, features: &str, json: bool) -> anyhow::Result<()> {
    let kind = cfg.model.kind;
    let (model_path, dual_path) = (cfg.kind_file("model", kind, "json"), cfg.kind_file("dual", kind, "json"));
    require(&[&model_path, &dual_path])?;
    let model = load(&model_path)?;
    let x = parse_features(features, model.as_response().vocab().len())?;
    let dual = read_dual(open(&dual_path)?).with_context(|| format!("reading {}", dual_path.display()))?;
    let checksum = model_checksum(&model);
    match &dual.model_checksum {
        Some(c) if *c != checksum => {
            return Err(promo_core::Error::Stale(format!(
                "{} was solved against model {c}, {} is {checksum}; rerun allocate",
                dual_path.display(),
                model_path.display()
            ))
            .into())
        }
        Some(_) => {}
        None => eprintln!("warning: {} records no model checksum; cannot verify it", dual_path.display()),
    }
    let costs = cfg.budget.cost_models();
    if costs.len() != dual.lambda.len() {
        return Err(promo_core::Error::Stale(format!(
            "dual has {} multiplier(s) but the configuration has {} cost kind(s)",
            dual.lambda.len(),
            costs.len()
        ))
        .into());
    }
    let level = online_decide(&dual, model.as_response(), &x, &costs)?;
    let incentive = model.as_response().grid().level(level);
    emit(
        json,
        json!({"features": x, "level": level, "incentive": incentive}),
        format!("{level}\t{incentive}\n"),
    );
    Ok(())
}

pub fn compare(cfg: &RunConfig, kinds: &[ModelKind], json: bool) -> anyhow::Result<()> {
    let paths: Vec<PathBuf> = kinds.iter().map(|&k| cfg.kind_file("report", k, "json")).collect();
    require(&paths.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    let reports: Vec<MetricsReport> = paths
        .iter()
        .map(|p| -> anyhow::Result<MetricsReport> {
            serde_json::from_reader(open(p)?).with_context(|| format!("reading {}", p.display()))
        })
        .collect::<anyhow::Result<_>>()?;
    emit(json, serde_json::to_value(&reports)?, format_table(&reports));
    Ok(())
}
