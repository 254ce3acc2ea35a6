//! Helpers shared by the integration and acceptance test targets.
#![allow(dead_code)]

use promo_core::allocator::{assign_given_lambda, ResponseMatrix};
use promo_core::model::nn::Tensor;
use promo_core::model::{IncentiveGrid, Point};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

pub fn random_points(rng: &mut ChaCha8Rng, vocab: &[usize], levels: usize, n: usize) -> Vec<Point> {
    (0..n)
        .map(|_| Point {
            features: [rng.gen_range(0..vocab[0]), rng.gen_range(0..vocab[1]), rng.gen_range(0..vocab[2])],
            level: rng.gen_range(0..levels),
            label: rng.gen_range(0..2),
            weight: rng.gen_range(0.5..2.0),
        })
        .collect()
}

/// Moves every parameter off zero so no activation sits exactly on a kink.
pub fn jitter(tensors: Vec<&mut Tensor>, rng: &mut ChaCha8Rng) {
    for t in tensors {
        for v in &mut t.data {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
}

/// Relative error `|g - fd| / max(|g|, |fd|)` over the full parameter
/// vector. Entry-wise ratios are meaningless for entries that are tiny
/// next to the smoothness term's large curvature near zero weights.
pub fn check<M: Clone>(
    model: &M,
    grads: &[Tensor],
    tensors_mut: impl Fn(&mut M) -> Vec<&mut Tensor>,
    loss: impl Fn(&M) -> f64,
) -> f64 {
    let mut probe = model.clone();
    let count = tensors_mut(&mut probe).len();
    let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
    for t in 0..count {
        for k in 0..grads[t].data.len() {
            let orig = tensors_mut(&mut probe)[t].data[k];
            tensors_mut(&mut probe)[t].data[k] = orig + H;
            let up = loss(&probe);
            tensors_mut(&mut probe)[t].data[k] = orig - H;
            let dn = loss(&probe);
            tensors_mut(&mut probe)[t].data[k] = orig;
            let fd = (up - dn) / (2.0 * H);
            let g = grads[t].data[k];
            diff += (g - fd) * (g - fd);
            na += g * g;
            nf += fd * fd;
        }
    }
    diff.sqrt() / na.sqrt().max(nf.sqrt()).max(1e-12)
}

pub fn random_grid(rng: &mut ChaCha8Rng, d: usize) -> IncentiveGrid {
    let mut levels = vec![0.0];
    for _ in 1..d {
        let last = *levels.last().unwrap();
        levels.push(last + rng.gen_range(1.0..20.0));
    }
    IncentiveGrid::new(levels).unwrap()
}

/// Random responses (monotone rows if `monotone`) and `k` cost matrices; the
/// first cost is face value, later ones are random per user.
pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize, monotone: bool) -> ResponseMatrix {
    let grid = random_grid(rng, d);
    let mut f = Vec::with_capacity(n * d);
    for _ in 0..n {
        let mut row: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
        if monotone {
            row.sort_by(f64::total_cmp);
        }
        f.extend(row);
    }
    let mut g = vec![grid.levels().repeat(n)];
    for _ in 1..k {
        g.push((0..n * d).map(|_| rng.gen_range(0.0..10.0)).collect());
    }
    ResponseMatrix::new(grid, n, f, g).unwrap()
}

pub fn min_spend(m: &ResponseMatrix, k: usize) -> f64 {
    (0..m.users())
        .map(|i| m.g_row(k, i).iter().cloned().fold(f64::INFINITY, f64::min))
        .sum()
}

pub fn free_spend(m: &ResponseMatrix, k: usize) -> f64 {
    assign_given_lambda(m, &vec![0.0; m.constraints()]).unwrap().spend[k]
}

pub fn random_budget(rng: &mut ChaCha8Rng, m: &ResponseMatrix, k: usize) -> f64 {
    let (lo, hi) = (min_spend(m, k), free_spend(m, k));
    lo + rng.gen_range(0.05..0.95) * (hi - lo)
}

pub fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-12)
}
