/// Probability clamp applied before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;
/// Added to the smoothness denominator so dead (zero) uplift weights stay finite.
/// Default floor added to the smoothness denominator. A floor near zero
/// lets one dead uplift unit hand its neighbours enormous gradients, which
/// then collapse every uplift weight to zero.
pub const SMOOTH_EPS: f64 = 1e-2;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Weighted binary cross-entropy.
pub fn log_loss(p: f64, y: u8, weight: f64) -> f64 {
    let p = clamp_prob(p);
    let ll = if y == 1 { -p.ln() } else { -(1.0 - p).ln() };
    weight * ll
}

/// `d log_loss / d logit` for `p = sigmoid(logit)`; zero where the clamp is active.
pub fn log_loss_dlogit(p: f64, y: u8, weight: f64) -> f64 {
    if p < PROB_CLAMP || p > 1.0 - PROB_CLAMP {
        return 0.0;
    }
    weight * (p - f64::from(y))
}

/// Normalized squared difference of adjacent uplift weights,
/// `1/n * sum_j (w_{j+1} - w_j)^2 / (w_{j+1} w_j + eps)`.
pub fn smoothness_loss(w: &[f64], eps: f64) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    let total: f64 = w
        .windows(2)
        .map(|p| {
            let r = p[1] - p[0];
            r * r / (p[1] * p[0] + eps)
        })
        .sum();
    total / w.len() as f64
}

/// Adds `scale * d smoothness_loss / d w` into `grad`.
pub fn smoothness_grad(w: &[f64], eps: f64, scale: f64, grad: &mut [f64]) {
    if w.len() < 2 || scale == 0.0 {
        return;
    }
    let k = scale / w.len() as f64;
    for j in 0..w.len() - 1 {
        let (lo, hi) = (w[j], w[j + 1]);
        let r = hi - lo;
        let q = hi * lo + eps;
        let rq = r / q;
        grad[j + 1] += k * (2.0 * rq - rq * rq * lo);
        grad[j] += k * (-2.0 * rq - rq * rq * hi);
    }
}
