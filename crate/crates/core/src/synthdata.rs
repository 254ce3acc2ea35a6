//! Synthetic promotion population with closed-form response curves.
//!
//! Every joint category of three 1-in-n categorical features owns a
//! monotone ground-truth curve `y[0..=100]` built from a truncated Gaussian
//! bump: `y[i] = a + b/(100 Z) * sum_{h=1..=i} exp(-(h-mu)^2 / (2 delta^2))`,
//! with `Z` the bump's maximum over the integer grid. Observations pick an
//! incentive in `1..=100` and draw a Bernoulli label from the curve.

use std::io::{BufRead, Write};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, FORMAT_VERSION};

/// Highest integer incentive a ground-truth curve is defined on.
pub const MAX_INCENTIVE: usize = 100;
/// Number of points of each ground-truth curve (`0..=MAX_INCENTIVE`).
pub const CURVE_POINTS: usize = MAX_INCENTIVE + 1;
/// Lower end of the Gaussian width range; the nominal range includes 0.
pub const MIN_DELTA: f64 = 1e-3;
/// Curves are kept strictly below 1 so they stay usable Bernoulli parameters.
pub const MAX_RESPONSE: f64 = 1.0 - 1e-9;

/// Category triple of one user.
pub type Features = [usize; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    pub a: f64,
    pub b: f64,
    pub mu: f64,
    pub delta: f64,
}

impl CurveParams {
    pub fn new(a: f64, mu: f64, delta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::invalid(format!("baseline a={a} outside [0,1]")));
        }
        if !(delta > 0.0) {
            return Err(Error::invalid(format!("width delta={delta} must be > 0")));
        }
        Ok(Self {
            a,
            b: 1.0 - a,
            mu,
            delta,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthCurve {
    pub params: CurveParams,
    pub y: Vec<f64>,
}

impl GroundTruthCurve {
    pub fn from_params(params: CurveParams) -> Self {
        let two_var = 2.0 * params.delta * params.delta;
        let bump: Vec<f64> = (0..CURVE_POINTS)
            .map(|h| {
                let d = h as f64 - params.mu;
                (-d * d / two_var).exp()
            })
            .collect();
        let z = bump.iter().cloned().fold(0.0, f64::max);
        let scale = if z > 0.0 { params.b / (100.0 * z) } else { 0.0 };

        let mut y = Vec::with_capacity(CURVE_POINTS);
        let mut acc = 0.0;
        y.push(params.a.min(MAX_RESPONSE));
        for g in &bump[1..] {
            acc += g;
            y.push((params.a + scale * acc).min(MAX_RESPONSE));
        }
        Self { params, y }
    }

    /// Expected response at an integer incentive.
    pub fn at(&self, incentive: usize) -> Option<f64> {
        self.y.get(incentive).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPopulation {
    pub n: [usize; 3],
    pub seed: u64,
    pub curves: Vec<GroundTruthCurve>,
}

impl SyntheticPopulation {
    pub fn categories(&self) -> usize {
        self.n.iter().product()
    }

    pub fn category_of(&self, x: &Features) -> Result<usize> {
        for (f, (&v, &size)) in x.iter().zip(self.n.iter()).enumerate() {
            if v >= size {
                return Err(Error::OutOfVocabulary {
                    feature: f,
                    value: v,
                    size,
                });
            }
        }
        Ok((x[0] * self.n[1] + x[1]) * self.n[2] + x[2])
    }

    pub fn features_of(&self, category: usize) -> Features {
        let x2 = category % self.n[2];
        let rest = category / self.n[2];
        [rest / self.n[1], rest % self.n[1], x2]
    }

    pub fn curve(&self, x: &Features) -> Result<&GroundTruthCurve> {
        Ok(&self.curves[self.category_of(x)?])
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        let file = PopulationFile {
            format_version: FORMAT_VERSION,
            population: self.clone(),
        };
        serde_json::to_writer_pretty(&mut w, &file)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn read_json<R: std::io::Read>(r: R) -> Result<Self> {
        let file: PopulationFile = serde_json::from_reader(r)?;
        check_version(file.format_version)?;
        if file.population.curves.len() != file.population.categories() {
            return Err(Error::invalid("population curve count does not match n1*n2*n3"));
        }
        Ok(file.population)
    }
}

#[derive(Serialize, Deserialize)]
struct PopulationFile {
    format_version: u32,
    #[serde(flatten)]
    population: SyntheticPopulation,
}

pub(crate) fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub features: Features,
    pub incentive: u32,
    pub label: u8,
    #[serde(default = "unit_weight")]
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propensity: Option<f64>,
}

fn unit_weight() -> f64 {
    1.0
}

impl TrainingSample {
    pub fn new(features: Features, incentive: u32, label: u8) -> Self {
        Self {
            features,
            incentive,
            label,
            weight: 1.0,
            propensity: None,
        }
    }
}

pub fn gen_population(n1: usize, n2: usize, n3: usize, seed: u64) -> Result<SyntheticPopulation> {
    if n1 == 0 || n2 == 0 || n3 == 0 {
        return Err(Error::invalid(format!(
            "category counts must be >= 1, got ({n1}, {n2}, {n3})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let curves = (0..n1 * n2 * n3)
        .map(|_| {
            let a = loop {
                let u: f64 = rng.gen();
                if u > 0.0 {
                    break u;
                }
            };
            let mu = rng.gen_range(-50.0..150.0);
            let delta = rng.gen_range(MIN_DELTA..=50.0);
            GroundTruthCurve::from_params(CurveParams {
                a,
                b: 1.0 - a,
                mu,
                delta,
            })
        })
        .collect();
    Ok(SyntheticPopulation {
        n: [n1, n2, n3],
        seed,
        curves,
    })
}

fn draw_label(rng: &mut ChaCha8Rng, y: f64) -> u8 {
    u8::from(rng.gen::<f64>() < y)
}

/// Per-category sample counts `z ~ U{1..1000}`, uniform incentives in
/// `1..=100`, Bernoulli labels.
pub fn draw_dataset(pop: &SyntheticPopulation, seed: u64) -> Vec<TrainingSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (c, curve) in pop.curves.iter().enumerate() {
        let features = pop.features_of(c);
        let z = rng.gen_range(1..=1000usize);
        for _ in 0..z {
            let p = rng.gen_range(1..=MAX_INCENTIVE);
            let label = draw_label(&mut rng, curve.y[p]);
            out.push(TrainingSample::new(features, p as u32, label));
        }
    }
    out
}

/// Dataset of a fixed size. The per-category `z ~ U{1..1000}` draws become
/// mixture weights for the category of each point.
pub fn draw_dataset_total(pop: &SyntheticPopulation, total: usize, seed: u64) -> Vec<TrainingSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<usize> = (0..pop.categories()).map(|_| rng.gen_range(1..=1000usize)).collect();
    let pick = WeightedIndex::new(&weights).expect("weights are positive");
    (0..total)
        .map(|_| {
            let c = pick.sample(&mut rng);
            let p = rng.gen_range(1..=MAX_INCENTIVE);
            let label = draw_label(&mut rng, pop.curves[c].y[p]);
            TrainingSample::new(pop.features_of(c), p as u32, label)
        })
        .collect()
}

/// Category mixture weights `z ~ U{1..1000}`; the same weights
/// [`draw_dataset_total`] uses for an equal seed.
pub fn mixture_weights(pop: &SyntheticPopulation, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pop.categories()).map(|_| rng.gen_range(1..=1000usize)).collect()
}

/// Users drawn i.i.d. from the mixture of [`mixture_weights`] for
/// `mixture_seed`. Cohorts with equal `mixture_seed` and different `seed`
/// are independent draws from one population.
pub fn draw_cohort(pop: &SyntheticPopulation, mixture_seed: u64, count: usize, seed: u64) -> Vec<Features> {
    let pick = WeightedIndex::new(mixture_weights(pop, mixture_seed)).expect("weights are positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| pop.features_of(pick.sample(&mut rng))).collect()
}

/// Users drawn i.i.d. from the category mixture `z ~ U{1..1000}` (the same
/// mixture and stream as [`draw_dataset_total`] for equal seeds).
pub fn draw_users(pop: &SyntheticPopulation, count: usize, seed: u64) -> Vec<Features> {
    draw_dataset_total(pop, count, seed)
        .into_iter()
        .map(|s| s.features)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasedDataset {
    pub samples: Vec<TrainingSample>,
    /// `propensities[category][p]` is the probability that a sample of that
    /// category receives incentive `p`; entry 0 is always 0.
    pub propensities: Vec<Vec<f64>>,
}

/// Assignment distribution over `1..=100` for one category: a softmax whose
/// tilt pushes high-baseline categories toward low incentives.
pub fn biased_propensity(a: f64, bias_strength: f64) -> Vec<f64> {
    let tilt = -bias_strength * (2.0 * a - 1.0);
    let mut probs = vec![0.0; CURVE_POINTS];
    let logits: Vec<f64> = (1..=MAX_INCENTIVE)
        .map(|p| tilt * (p - 1) as f64 / (MAX_INCENTIVE - 1) as f64)
        .collect();
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let norm: f64 = logits.iter().map(|l| (l - top).exp()).sum();
    for (p, l) in (1..=MAX_INCENTIVE).zip(&logits) {
        probs[p] = (l - top).exp() / norm;
    }
    probs
}

/// As [`draw_dataset`], but the incentive of each sample depends on its
/// category. With `bias_strength == 0` the output matches `draw_dataset`
/// sample for sample (plus the recorded propensity).
pub fn draw_biased_dataset(pop: &SyntheticPopulation, bias_strength: f64, seed: u64) -> Result<BiasedDataset> {
    if !(bias_strength >= 0.0) {
        return Err(Error::invalid(format!("bias_strength {bias_strength} must be >= 0")));
    }
    let propensities: Vec<Vec<f64>> = pop
        .curves
        .iter()
        .map(|c| biased_propensity(c.params.a, bias_strength))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for (c, curve) in pop.curves.iter().enumerate() {
        let features = pop.features_of(c);
        let pick = WeightedIndex::new(&propensities[c]).expect("propensities are normalized");
        let z = rng.gen_range(1..=1000usize);
        for _ in 0..z {
            let p = if bias_strength == 0.0 {
                rng.gen_range(1..=MAX_INCENTIVE)
            } else {
                pick.sample(&mut rng)
            };
            let label = draw_label(&mut rng, curve.y[p]);
            let mut s = TrainingSample::new(features, p as u32, label);
            s.propensity = Some(propensities[c][p]);
            samples.push(s);
        }
    }
    Ok(BiasedDataset {
        samples,
        propensities,
    })
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    format_version: u32,
    kind: String,
}

pub fn write_dataset<W: Write>(mut w: W, samples: &[TrainingSample]) -> Result<()> {
    let header = DatasetHeader {
        format_version: FORMAT_VERSION,
        kind: "dataset".into(),
    };
    serde_json::to_writer(&mut w, &header)?;
    writeln!(w)?;
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Vec<TrainingSample>> {
    let mut lines = r.lines();
    let header: DatasetHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line?)?,
        None => return Err(Error::invalid("empty dataset file")),
    };
    check_version(header.format_version)?;
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: TrainingSample = serde_json::from_str(&line)?;
        if !(s.weight >= 0.0) {
            return Err(Error::invalid(format!("negative sample weight {}", s.weight)));
        }
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    // Frozen from a direct summation script.
    #[test]
    fn curve_matches_direct_summation() {
        let c = GroundTruthCurve::from_params(CurveParams::new(0.3, 40.0, 10.0).unwrap());
        assert_eq!(c.y[0], 0.3);
        assert_close(c.y[10], 0.30027087271216635, 1e-14);
        assert_close(c.y[50], 0.4497063522096176, 1e-14);
        assert_close(c.y[100], 0.4754571697123836, 1e-14);

        let c = GroundTruthCurve::from_params(CurveParams::new(0.6, -20.0, 30.0).unwrap());
        assert_close(c.y[10], 0.634763708053271, 1e-14);
        assert_close(c.y[100], 0.6928446430725429, 1e-14);

        let c = GroundTruthCurve::from_params(CurveParams::new(0.1, 130.0, 25.0).unwrap());
        assert_close(c.y[50], 0.10085247287830236, 1e-14);
        assert_close(c.y[100], 0.23786509604116984, 1e-14);
    }

    #[test]
    fn cohorts_share_the_mixture_of_their_mixture_seed() {
        let pop = gen_population(2, 2, 1, 5).unwrap();
        let w = mixture_weights(&pop, 7);
        let total: usize = w.iter().sum();
        let a = draw_cohort(&pop, 7, 20_000, 1);
        let b = draw_cohort(&pop, 7, 20_000, 2);
        assert_ne!(a, b);
        assert_eq!(a, draw_cohort(&pop, 7, 20_000, 1));
        for (c, &z) in w.iter().enumerate() {
            let x = pop.features_of(c);
            for cohort in [&a, &b] {
                let share = cohort.iter().filter(|u| **u == x).count() as f64 / 20_000.0;
                let p = z as f64 / total as f64;
                assert!((share - p).abs() < 4.0 * (p * (1.0 - p) / 20_000.0).sqrt() + 1e-12, "{share} vs {p}");
            }
        }
        // The dataset draw of the same seed uses the same mixture.
        let data = draw_dataset_total(&pop, 20_000, 7);
        let x = pop.features_of(0);
        let share = data.iter().filter(|s| s.features == x).count() as f64 / 20_000.0;
        let p = w[0] as f64 / total as f64;
        assert!((share - p).abs() < 4.0 * (p * (1.0 - p) / 20_000.0).sqrt() + 1e-12);
    }

    fn increments(y: &[f64]) -> Vec<f64> {
        y.windows(2).map(|w| w[1] - w[0]).collect()
    }

    #[test]
    fn center_below_range_gives_decreasing_increments() {
        let c = GroundTruthCurve::from_params(CurveParams::new(0.2, -10.0, 40.0).unwrap());
        let inc = increments(&c.y);
        assert!(inc.windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn center_above_range_gives_increasing_increments() {
        let c = GroundTruthCurve::from_params(CurveParams::new(0.2, 120.0, 40.0).unwrap());
        let inc = increments(&c.y);
        assert!(inc.windows(2).all(|w| w[1] >= w[0] - 1e-15));
    }

    #[test]
    fn random_curves_are_monotone_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let a = rng.gen_range(1e-6..1.0);
            let p = CurveParams::new(a, rng.gen_range(-50.0..150.0), rng.gen_range(MIN_DELTA..=50.0)).unwrap();
            let c = GroundTruthCurve::from_params(p);
            assert_eq!(c.y.len(), CURVE_POINTS);
            assert_eq!(c.y[0], a);
            assert!(c.y.windows(2).all(|w| w[1] >= w[0]));
            assert!(c.y.iter().all(|&v| v >= a && v <= 1.0));
            assert!(c.y[100] - c.y[0] <= p.b + 1e-15);
            assert!(c.y[100] <= (a + p.b / 100.0 * 101.0).min(1.0));
        }
    }

    #[test]
    fn population_is_deterministic_and_complete() {
        let p1 = gen_population(3, 5, 7, 11).unwrap();
        let p2 = gen_population(3, 5, 7, 11).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(p1.curves.len(), 105);
        for c in &p1.curves {
            assert!(c.params.a > 0.0 && c.params.a < 1.0);
            assert_eq!(c.params.b, 1.0 - c.params.a);
            assert!((-50.0..150.0).contains(&c.params.mu));
            assert!(c.params.delta >= MIN_DELTA && c.params.delta <= 50.0);
        }
        assert_ne!(p1, gen_population(3, 5, 7, 12).unwrap());
    }

    #[test]
    fn zero_category_count_is_rejected() {
        assert!(matches!(gen_population(0, 2, 2, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn category_index_roundtrip() {
        let p = gen_population(3, 5, 7, 1).unwrap();
        for c in 0..p.categories() {
            assert_eq!(p.category_of(&p.features_of(c)).unwrap(), c);
        }
        assert!(p.category_of(&[3, 0, 0]).is_err());
    }

    #[test]
    fn dataset_is_deterministic_and_in_range() {
        let pop = gen_population(2, 2, 2, 3).unwrap();
        let d1 = draw_dataset(&pop, 9);
        let d2 = draw_dataset(&pop, 9);
        assert_eq!(d1, d2);
        let mut b1 = Vec::new();
        let mut b2 = Vec::new();
        write_dataset(&mut b1, &d1).unwrap();
        write_dataset(&mut b2, &d2).unwrap();
        assert_eq!(b1, b2);
        assert!(d1.iter().all(|s| (1..=100).contains(&s.incentive) && s.label <= 1));
        assert_eq!(read_dataset(&b1[..]).unwrap(), d1);
    }

    #[test]
    fn saturated_curve_gives_all_positive_labels() {
        let mut pop = gen_population(1, 1, 1, 0).unwrap();
        pop.curves[0] = GroundTruthCurve::from_params(CurveParams::new(1.0, 50.0, 10.0).unwrap());
        let d = draw_dataset(&pop, 5);
        assert!(d.iter().all(|s| s.label == 1));
    }

    #[test]
    fn fixed_size_dataset_has_requested_length() {
        let pop = gen_population(2, 2, 2, 3).unwrap();
        let d = draw_dataset_total(&pop, 20000, 4);
        assert_eq!(d.len(), 20000);
        let (train, rest) = d.split_at(5000);
        let (valid, test) = rest.split_at(5000);
        assert_eq!((train.len(), valid.len(), test.len()), (5000, 5000, 10000));
    }

    #[test]
    fn cell_means_track_ground_truth() {
        let pop = gen_population(1, 1, 1, 21).unwrap();
        let d = draw_dataset_total(&pop, 200_000, 22);
        let mut hits = vec![0usize; CURVE_POINTS];
        let mut pos = vec![0usize; CURVE_POINTS];
        for s in &d {
            hits[s.incentive as usize] += 1;
            pos[s.incentive as usize] += s.label as usize;
        }
        for p in 1..=MAX_INCENTIVE {
            assert!(hits[p] >= 500);
            let y = pop.curves[0].y[p];
            let sigma = (y * (1.0 - y) / hits[p] as f64).sqrt();
            let m = pos[p] as f64 / hits[p] as f64;
            assert!((m - y).abs() <= 3.0 * sigma + 1e-12, "p={p}: {m} vs {y}");
        }
    }

    #[test]
    fn unbiased_limit_matches_plain_draw() {
        let pop = gen_population(2, 2, 2, 3).unwrap();
        let plain = draw_dataset(&pop, 17);
        let biased = draw_biased_dataset(&pop, 0.0, 17).unwrap();
        assert_eq!(plain.len(), biased.samples.len());
        for (a, b) in plain.iter().zip(&biased.samples) {
            assert_eq!((a.features, a.incentive, a.label), (b.features, b.incentive, b.label));
        }
    }

    #[test]
    fn propensities_are_normalized() {
        let pop = gen_population(3, 5, 7, 3).unwrap();
        let d = draw_biased_dataset(&pop, 6.0, 1).unwrap();
        for row in &d.propensities {
            assert_eq!(row[0], 0.0);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(draw_biased_dataset(&pop, -1.0, 1).is_err());
    }

    #[test]
    fn strong_bias_correlates_baseline_with_low_incentive() {
        let pop = gen_population(3, 5, 7, 5).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut seed = 0;
        while xs.len() < 100_000 {
            for s in draw_biased_dataset(&pop, 8.0, seed).unwrap().samples {
                xs.push(pop.curve(&s.features).unwrap().params.a);
                ys.push(s.incentive as f64);
            }
            seed += 1;
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
        assert!(cov < 0.0);
    }
}
