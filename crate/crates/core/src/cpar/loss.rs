//! Per-variable negative log-likelihoods and their derivatives with respect
//! to the raw head outputs.

use std::f64::consts::PI;

pub const PROB_FLOOR: f64 = 1e-12;
pub const MISS_CLAMP: f64 = 1e-7;
pub const SIGMA_FLOOR: f64 = 1e-4;

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Continuous-variable loss: `−ln N(x; μ, σ²) − ln(1−m)` for a present value
/// and `−ln m` for a missing one, with `m` clamped to `[1e-7, 1−1e-7]`.
pub fn continuous_loss(x: Option<f64>, mu: f64, sigma: f64, m: f64) -> f64 {
    let m = m.clamp(MISS_CLAMP, 1.0 - MISS_CLAMP);
    match x {
        None => -m.ln(),
        Some(x) => gaussian_nll(x, mu, sigma) - (1.0 - m).ln(),
    }
}

pub fn gaussian_nll(x: f64, mu: f64, sigma: f64) -> f64 {
    let d = (x - mu) / sigma;
    0.5 * (2.0 * PI).ln() + sigma.ln() + 0.5 * d * d
}

/// `−ln p_y` after flooring every probability at 1e-12 and renormalizing.
pub fn categorical_loss(y: usize, probs: &[f64]) -> f64 {
    let total: f64 = probs.iter().map(|p| p.max(PROB_FLOOR)).sum();
    -(probs[y].max(PROB_FLOOR) / total).ln()
}

/// Binary cross-entropy of the continue/stop head; `c` is the continue
/// probability.
pub fn stop_loss(c: f64, continues: bool) -> f64 {
    let c = c.clamp(MISS_CLAMP, 1.0 - MISS_CLAMP);
    if continues {
        -c.ln()
    } else {
        -(1.0 - c).ln()
    }
}

/// Derivatives of the Gaussian part w.r.t. μ and the pre-softplus σ output.
pub(crate) fn gaussian_grads(x: f64, mu: f64, sigma_raw: f64) -> (f64, f64, f64) {
    let sigma = softplus(sigma_raw) + SIGMA_FLOOR;
    let diff = x - mu;
    let s2 = sigma * sigma;
    let g_mu = -diff / s2;
    let g_sigma = 1.0 / sigma - diff * diff / (s2 * sigma);
    (gaussian_nll(x, mu, sigma), g_mu, g_sigma * logistic(sigma_raw))
}

/// Loss and derivative w.r.t. the logit of a clamped Bernoulli probability,
/// where `positive` selects `−ln p` and otherwise `−ln(1−p)`.
pub(crate) fn bernoulli_grad(logit: f64, positive: bool) -> (f64, f64) {
    let p = logistic(logit);
    let clamped = !(MISS_CLAMP..=1.0 - MISS_CLAMP).contains(&p);
    let pc = p.clamp(MISS_CLAMP, 1.0 - MISS_CLAMP);
    let (loss, grad) = if positive {
        (-pc.ln(), -(1.0 - p))
    } else {
        (-(1.0 - pc).ln(), p)
    };
    (loss, if clamped { 0.0 } else { grad })
}
