//! Inverse-propensity weighting of logged samples.
//!
//! Propensities are empirical frequencies of each grid level within a
//! bucket of users (a subset of the categorical features, by default all of
//! them), with additive smoothing. Weights are clipped reciprocals.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::model::IncentiveGrid;
use crate::synthdata::{check_version, TrainingSample};
use crate::{Error, Result, FORMAT_VERSION};

pub const DEFAULT_SMOOTHING: f64 = 1.0;
pub const DEFAULT_CLIP_MAX: f64 = 100.0;

/// Which feature positions make up a propensity bucket.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BucketSpec(Vec<usize>);

impl BucketSpec {
    pub fn new(mut features: Vec<usize>) -> Result<Self> {
        features.sort_unstable();
        features.dedup();
        if features.iter().any(|&f| f >= 3) {
            return Err(Error::invalid(format!("bucket features {features:?} must be in 0..3")));
        }
        Ok(Self(features))
    }

    /// Full joint category.
    pub fn joint() -> Self {
        Self(vec![0, 1, 2])
    }

    pub fn features(&self) -> &[usize] {
        &self.0
    }

    fn key(&self, x: &[usize; 3]) -> Vec<usize> {
        self.0.iter().map(|&f| x[f]).collect()
    }
}

impl Default for BucketSpec {
    fn default() -> Self {
        Self::joint()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BucketRow {
    key: Vec<usize>,
    count: usize,
    probs: Vec<f64>,
}

/// Estimated `P(level | bucket)` for every observed bucket, plus the global
/// distribution used for buckets never seen during fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TableFile", into = "TableFile")]
pub struct PropensityTable {
    pub bucket: BucketSpec,
    pub grid: IncentiveGrid,
    pub smoothing: f64,
    rows: BTreeMap<Vec<usize>, (usize, Vec<f64>)>,
    global: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    format_version: u32,
    bucket: BucketSpec,
    grid: IncentiveGrid,
    smoothing: f64,
    global: Vec<f64>,
    buckets: Vec<BucketRow>,
}

impl From<PropensityTable> for TableFile {
    fn from(t: PropensityTable) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            bucket: t.bucket,
            grid: t.grid,
            smoothing: t.smoothing,
            global: t.global,
            buckets: t
                .rows
                .into_iter()
                .map(|(key, (count, probs))| BucketRow { key, count, probs })
                .collect(),
        }
    }
}

impl TryFrom<TableFile> for PropensityTable {
    type Error = Error;

    fn try_from(f: TableFile) -> Result<Self> {
        check_version(f.format_version)?;
        let d = f.grid.len();
        let ok = |p: &[f64]| p.len() == d && p.iter().all(|v| v.is_finite() && *v >= 0.0);
        if !ok(&f.global) || f.buckets.iter().any(|r| !ok(&r.probs) || r.key.len() != f.bucket.0.len()) {
            return Err(Error::invalid("propensity table rows do not match the grid"));
        }
        Ok(Self {
            bucket: f.bucket,
            grid: f.grid,
            smoothing: f.smoothing,
            rows: f.buckets.into_iter().map(|r| (r.key, (r.count, r.probs))).collect(),
            global: f.global,
        })
    }
}

fn normalize(counts: &[f64], smoothing: f64) -> Vec<f64> {
    let total: f64 = counts.iter().map(|c| c + smoothing).sum();
    counts.iter().map(|c| (c + smoothing) / total).collect()
}

/// Counts grid levels per bucket. Existing sample weights are ignored, so
/// refitting on weighted samples gives the same table.
pub fn fit_propensity(
    samples: &[TrainingSample],
    grid: &IncentiveGrid,
    bucket: &BucketSpec,
    smoothing: f64,
) -> Result<PropensityTable> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot fit propensities on an empty sample set"));
    }
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::invalid(format!("smoothing {smoothing} must be finite and >= 0")));
    }
    let d = grid.len();
    let mut counts: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    let mut global = vec![0.0; d];
    for s in samples {
        let j = grid.level_index(f64::from(s.incentive))?;
        counts.entry(bucket.key(&s.features)).or_insert_with(|| vec![0.0; d])[j] += 1.0;
        global[j] += 1.0;
    }
    let rows = counts
        .into_iter()
        .map(|(k, c)| {
            let n = c.iter().sum::<f64>() as usize;
            (k, (n, normalize(&c, smoothing)))
        })
        .collect();
    Ok(PropensityTable {
        bucket: bucket.clone(),
        grid: grid.clone(),
        smoothing,
        rows,
        global: normalize(&global, smoothing),
    })
}

impl PropensityTable {
    /// Level distribution for a user's bucket, or the global one if the
    /// bucket was never observed.
    pub fn distribution(&self, x: &[usize; 3]) -> &[f64] {
        self.rows
            .get(&self.bucket.key(x))
            .map(|(_, p)| p.as_slice())
            .unwrap_or(&self.global)
    }

    pub fn is_known(&self, x: &[usize; 3]) -> bool {
        self.rows.contains_key(&self.bucket.key(x))
    }

    pub fn propensity(&self, x: &[usize; 3], incentive: f64) -> Result<f64> {
        let j = self.grid.level_index(incentive)?;
        Ok(self.distribution(x)[j])
    }

    pub fn global(&self) -> &[f64] {
        &self.global
    }

    pub fn bucket_count(&self) -> usize {
        self.rows.len()
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }
}

fn clipped_reciprocal(p: f64, clip_max: f64) -> f64 {
    if p > 0.0 {
        (1.0 / p).min(clip_max)
    } else {
        clip_max
    }
}

fn check_clip(clip_max: f64) -> Result<()> {
    if !(clip_max >= 1.0) {
        return Err(Error::invalid(format!("clip_max {clip_max} must be >= 1")));
    }
    Ok(())
}

/// New samples with `weight = min(1/p, clip_max)` and the estimated
/// propensity recorded.
pub fn attach_weights(
    samples: &[TrainingSample],
    table: &PropensityTable,
    clip_max: f64,
) -> Result<Vec<TrainingSample>> {
    check_clip(clip_max)?;
    samples
        .iter()
        .map(|s| {
            let p = table.propensity(&s.features, f64::from(s.incentive))?;
            Ok(TrainingSample {
                weight: clipped_reciprocal(p, clip_max),
                propensity: Some(p),
                ..s.clone()
            })
        })
        .collect()
}

/// Weights from propensities already logged on the samples (for example
/// the true assignment probabilities of a synthetic biased log).
pub fn weights_from_logged(samples: &[TrainingSample], clip_max: f64) -> Result<Vec<TrainingSample>> {
    check_clip(clip_max)?;
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = s
                .propensity
                .ok_or_else(|| Error::invalid(format!("sample {i} has no logged propensity")))?;
            Ok(TrainingSample {
                weight: clipped_reciprocal(p, clip_max),
                ..s.clone()
            })
        })
        .collect()
}
