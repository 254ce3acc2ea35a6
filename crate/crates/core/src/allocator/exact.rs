//! Brute-force reference solutions for tiny instances.
//!
//! The LP optimum is found by enumerating basic feasible solutions. With
//! `t` of the `K` budget rows tight, a vertex has exactly `N + t` nonzero
//! `z` entries: every user has at least one, and `t` extra entries are
//! spread over the users as fractional supports. For each such support
//! pattern the equality system is square and solved directly. The integer
//! optimum is found by enumerating all `D^N` level choices.

use super::{within_budget, Assignment, ResponseMatrix};
use crate::{Error, Result};

/// Largest `N * D` the enumeration accepts.
pub const EXACT_SIZE_LIMIT: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct ExactSolution {
    pub lp_objective: f64,
    pub lp_plan: Vec<Assignment>,
    /// `None` if no integer assignment meets every budget.
    pub ilp_objective: Option<f64>,
    pub ilp_levels: Option<Vec<usize>>,
}

struct Search<'a> {
    m: &'a ResponseMatrix,
    budgets: &'a [f64],
    tight: Vec<usize>,
    supports: Vec<Vec<Vec<usize>>>,
    best: Option<(f64, Vec<Assignment>)>,
    singles: Vec<usize>,
    multi: Vec<(usize, Vec<usize>)>,
}

fn combinations(d: usize, size: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, d: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for j in start..d {
            cur.push(j);
            rec(j + 1, d, size, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, d, size, &mut Vec::new(), &mut out);
    out
}

/// Gaussian elimination with partial pivoting; `None` if singular.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let k = a[r][col] / a[col][col];
            if k != 0.0 {
                for c in col..n {
                    a[r][c] -= k * a[col][c];
                }
                b[r] -= k * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

impl Search<'_> {
    fn dfs(&mut self, i: usize, extra: usize) {
        if i == self.m.users() {
            if extra == 0 {
                self.leaf();
            }
            return;
        }
        for size in 1..=extra + 1 {
            if size > self.m.levels() {
                break;
            }
            for s in 0..self.supports[size].len() {
                let support = self.supports[size][s].clone();
                if size == 1 {
                    self.singles[i] = support[0];
                    self.dfs(i + 1, extra);
                } else {
                    self.multi.push((i, support));
                    self.singles[i] = usize::MAX;
                    self.dfs(i + 1, extra - (size - 1));
                    self.multi.pop();
                }
            }
        }
    }

    fn leaf(&mut self) {
        let m = self.m;
        let k = m.constraints();
        let mut base_g = vec![0.0; k];
        let mut base_f = 0.0;
        for (i, &j) in self.singles.iter().enumerate() {
            if j != usize::MAX {
                base_f += m.f_row(i)[j];
                for (c, g) in base_g.iter_mut().enumerate() {
                    *g += m.g_row(c, i)[j];
                }
            }
        }
        let vars: Vec<(usize, usize)> = self
            .multi
            .iter()
            .flat_map(|(i, s)| s.iter().map(move |&j| (*i, j)))
            .collect();
        let z = if vars.is_empty() {
            Vec::new()
        } else {
            let n = vars.len();
            let mut a = Vec::with_capacity(n);
            let mut b = Vec::with_capacity(n);
            for (i, _) in &self.multi {
                a.push(vars.iter().map(|(u, _)| if u == i { 1.0 } else { 0.0 }).collect());
                b.push(1.0);
            }
            for &c in &self.tight {
                a.push(vars.iter().map(|&(u, j)| m.g_row(c, u)[j]).collect());
                b.push(self.budgets[c] - base_g[c]);
            }
            match solve_linear(a, b) {
                Some(z) => z,
                None => return,
            }
        };
        if z.iter().any(|&v| !(-1e-10..=1.0 + 1e-10).contains(&v)) {
            return;
        }
        let z: Vec<f64> = z.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let mut obj = base_f;
        let mut spend = base_g;
        for (&(u, j), &v) in vars.iter().zip(&z) {
            obj += v * m.f_row(u)[j];
            for (c, s) in spend.iter_mut().enumerate() {
                *s += v * m.g_row(c, u)[j];
            }
        }
        if !spend.iter().zip(self.budgets).all(|(s, b)| within_budget(*s, *b)) {
            return;
        }
        if self.best.as_ref().is_some_and(|(b, _)| *b >= obj) {
            return;
        }
        let mut plan: Vec<Assignment> = self
            .singles
            .iter()
            .map(|&j| if j == usize::MAX { Assignment::single(0) } else { Assignment::single(j) })
            .collect();
        let mut offset = 0;
        for (i, s) in &self.multi {
            let mix: Vec<(usize, f64)> = s.iter().zip(&z[offset..offset + s.len()]).map(|(&j, &p)| (j, p)).collect();
            offset += s.len();
            plan[*i] = Assignment::Mixed { mix };
        }
        self.best = Some((obj, plan));
    }
}

fn best_integer(m: &ResponseMatrix, budgets: &[f64]) -> Option<(f64, Vec<usize>)> {
    let (n, d) = (m.users(), m.levels());
    let mut levels = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let feasible = (0..m.constraints()).all(|c| {
            let s: f64 = levels.iter().enumerate().map(|(i, &j)| m.g_row(c, i)[j]).sum();
            within_budget(s, budgets[c])
        });
        if feasible {
            let obj: f64 = levels.iter().enumerate().map(|(i, &j)| m.f_row(i)[j]).sum();
            if best.as_ref().map_or(true, |(b, _)| obj > *b) {
                best = Some((obj, levels.clone()));
            }
        }
        // Odometer increment.
        let mut pos = 0;
        loop {
            if pos == n {
                return best;
            }
            levels[pos] += 1;
            if levels[pos] < d {
                break;
            }
            levels[pos] = 0;
            pos += 1;
        }
    }
}

/// Exact LP and integer optima for instances with `N * D <= 40` and at most
/// two cost kinds.
pub fn solve_exact_small(m: &ResponseMatrix, budgets: &[f64]) -> Result<ExactSolution> {
    let (n, d, k) = (m.users(), m.levels(), m.constraints());
    if n * d > EXACT_SIZE_LIMIT {
        return Err(Error::invalid(format!(
            "exact enumeration limited to N * D <= {EXACT_SIZE_LIMIT}, got {n} * {d}"
        )));
    }
    if k > 2 || budgets.len() != k {
        return Err(Error::invalid("exact enumeration supports one or two budgets"));
    }
    for c in 0..k {
        let min_spend: f64 = (0..n)
            .map(|i| m.g_row(c, i).iter().cloned().fold(f64::INFINITY, f64::min))
            .sum();
        if !within_budget(min_spend, budgets[c]) {
            return Err(Error::Infeasible {
                constraint: c,
                budget: budgets[c],
                min_spend,
            });
        }
    }
    let mut supports = vec![Vec::new()];
    for size in 1..=k + 1 {
        supports.push(combinations(d, size));
    }
    let mut best: Option<(f64, Vec<Assignment>)> = None;
    for mask in 0..(1usize << k) {
        let tight: Vec<usize> = (0..k).filter(|c| mask & (1 << c) != 0).collect();
        let t = tight.len();
        let mut s = Search {
            m,
            budgets,
            tight,
            supports: supports.clone(),
            best: best.take(),
            singles: vec![0; n],
            multi: Vec::new(),
        };
        s.dfs(0, t);
        best = s.best;
    }
    let (lp_objective, lp_plan) =
        best.ok_or_else(|| Error::invalid("no feasible vertex found; budgets are jointly infeasible"))?;
    let ilp = best_integer(m, budgets);
    Ok(ExactSolution {
        lp_objective,
        lp_plan,
        ilp_objective: ilp.as_ref().map(|x| x.0),
        ilp_levels: ilp.map(|x| x.1),
    })
}
