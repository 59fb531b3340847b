//! Shared numeric guards and stable reductions.

/// Guard added to every denominator and used as the probability floor.
pub const EPSILON: f64 = 1e-10;

/// `log(sum(exp(x)))` via max subtraction.
///
/// Returns `None` for an empty slice.
pub fn logsumexp(values: &[f64]) -> Option<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        return None;
    }
    if max == f64::NEG_INFINITY {
        return Some(f64::NEG_INFINITY);
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Some(max + sum.ln())
}

/// Softmax into a fresh vector, stable for large logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let Some(lse) = logsumexp(logits) else {
        return Vec::new();
    };
    logits.iter().map(|z| (z - lse).exp()).collect()
}

/// Probability clamped into `[EPSILON, 1]` before taking logs.
#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPSILON, 1.0)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn std_pop(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    var.sqrt()
}
