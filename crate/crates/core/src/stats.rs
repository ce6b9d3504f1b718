//! Goodness-of-fit helpers used by the sampler checks.

use std::f64::consts::PI;

/// Two-sided Kolmogorov-Smirnov statistic of `samples` against `cdf`.
///
/// Sorts `samples` in place.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &mut [f64], cdf: F) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    d
}

/// CDF of the rotation angle of a Haar-uniform rotation, `(theta - sin theta) / pi`.
pub fn haar_angle_cdf(theta: f64) -> f64 {
    (theta - theta.sin()) / PI
}

/// Equal-width histogram of `values` over `[lo, hi]`; out-of-range values are clamped.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let idx = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    counts
}
