//! Point and probabilistic forecast scores.

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Fraction of predictive vectors whose argmax is the truth.
pub fn accuracy(predictions: &[Vec<f64>], truths: &[usize]) -> f64 {
    assert_eq!(predictions.len(), truths.len());
    let hits = predictions.iter().zip(truths).filter(|(p, &t)| argmax(p) == t).count();
    hits as f64 / truths.len() as f64
}

/// Shannon entropy in nats.
pub fn predictive_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

pub fn mean_predictive_entropy(predictions: &[Vec<f64>]) -> f64 {
    predictions.iter().map(|p| predictive_entropy(p)).sum::<f64>() / predictions.len() as f64
}

/// `log p(truth)`; higher is better.
pub fn log_score(p: &[f64], truth: usize) -> f64 {
    p[truth].ln()
}

pub fn mean_log_score(predictions: &[Vec<f64>], truths: &[usize]) -> f64 {
    assert_eq!(predictions.len(), truths.len());
    predictions.iter().zip(truths).map(|(p, &t)| log_score(p, t)).sum::<f64>() / truths.len() as f64
}

/// Interval score of the central `(1 - α)` interval `[l, u]` at outcome `x`.
pub fn interval_score(l: f64, u: f64, x: f64, alpha: f64) -> f64 {
    let mut s = u - l;
    if x < l {
        s += 2.0 / alpha * (l - x);
    }
    if x > u {
        s += 2.0 / alpha * (x - u);
    }
    s
}

/// Mean absolute error.
pub fn mae(forecasts: &[f64], truths: &[f64]) -> f64 {
    assert_eq!(forecasts.len(), truths.len());
    forecasts.iter().zip(truths).map(|(f, t)| (f - t).abs()).sum::<f64>() / truths.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}
