//! Gaussian large-deviation rates for pairwise false selection.

use crate::error::{OsarError, Result};

/// One solution at a fixed parameter point: output mean, output std and
/// within-point sampling fraction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianArm {
    pub mean: f64,
    pub std: f64,
    pub fraction: f64,
}

impl GaussianArm {
    pub fn new(mean: f64, std: f64, fraction: f64) -> Self {
        Self { mean, std, fraction }
    }
}

/// Rate at which `challenger` is falsely ranked ahead of `best`.
pub fn pairwise_rate(best: &GaussianArm, challenger: &GaussianArm) -> f64 {
    if best.fraction <= 0.0 || challenger.fraction <= 0.0 {
        return 0.0;
    }
    let gap = challenger.mean - best.mean;
    if gap == 0.0 {
        return 0.0;
    }
    let denom = challenger.std.powi(2) / challenger.fraction + best.std.powi(2) / best.fraction;
    gap * gap / (2.0 * denom)
}

/// Smallest pairwise rate against the arm at `best`, i.e. the plug-in G of one point.
pub fn min_challenger_rate(arms: &[GaussianArm], best: usize) -> f64 {
    arms.iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, a)| pairwise_rate(&arms[best], a))
        .fold(f64::INFINITY, f64::min)
}

/// Optimal static allocation of one point's budget among `k` Gaussian arms.
#[derive(Clone, Debug, PartialEq)]
pub struct PointRate {
    pub rate: f64,
    pub fractions: Vec<f64>,
}

/// Maximize the smallest challenger rate over the simplex.
///
/// With challenger shares written relative to the best arm, x_i = α_i/α_b,
/// a common per-unit rate w fixes x_i(w) = λ_i²/(d_i²/(2w) − λ_b²). The
/// variance balance 1/λ_b² = Σ x_i²/λ_i² is monotone in w and is solved by
/// bisection; the rate is then α_b·w.
pub fn optimal_point_rate(means: &[f64], stds: &[f64], best: usize) -> Result<PointRate> {
    let k = means.len();
    if k < 2 || stds.len() != k || best >= k {
        return Err(OsarError::Contract(format!(
            "need at least two arms with matching stds, got {k} means and {} stds",
            stds.len()
        )));
    }
    if stds.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(OsarError::Domain("arm standard deviations must be positive".into()));
    }
    for (i, &m) in means.iter().enumerate() {
        if i != best && m <= means[best] {
            return Err(OsarError::Degenerate(format!(
                "arm {i} mean {m} does not exceed best arm {best} mean {}",
                means[best]
            )));
        }
    }
    let var_b = stds[best].powi(2);
    let gaps2: Vec<f64> = means.iter().map(|m| (m - means[best]).powi(2)).collect();
    let w_max = (0..k)
        .filter(|&i| i != best)
        .map(|i| gaps2[i] / (2.0 * var_b))
        .fold(f64::INFINITY, f64::min);

    let shares = |w: f64| -> Vec<f64> {
        (0..k)
            .map(|i| {
                if i == best {
                    1.0
                } else {
                    let v = stds[i].powi(2);
                    let d = gaps2[i] / (2.0 * w) - var_b;
                    if d <= 0.0 {
                        f64::INFINITY
                    } else {
                        v / d
                    }
                }
            })
            .collect()
    };
    let balance = |x: &[f64]| -> f64 {
        let s: f64 = (0..k).filter(|&i| i != best).map(|i| x[i] * x[i] / stds[i].powi(2)).sum();
        s - 1.0 / var_b
    };

    let (mut lo, mut hi) = (0.0, w_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if balance(&shares(mid)) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let w = 0.5 * (lo + hi);
    let x = shares(w);
    let total: f64 = x.iter().sum();
    if !total.is_finite() {
        return Err(OsarError::Numerical("balance bisection did not converge".into()));
    }
    let fractions: Vec<f64> = x.iter().map(|v| v / total).collect();
    let rate = w / total;
    Ok(PointRate { rate, fractions })
}

/// Index of the smallest mean, lowest index on ties.
pub fn argmin_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}
