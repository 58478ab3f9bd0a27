//! Small statistics helpers shared by the estimators.

use serde::{Deserialize, Serialize};

use crate::rng::StreamRng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Standard error of the slope (zero for two points).
    pub slope_stderr: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn linear_fit(points: &[(f64, f64)]) -> LinearFit {
    let n = points.len() as f64;
    assert!(points.len() >= 2, "need at least two points for a fit");
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let slope_stderr = if points.len() > 2 { (sse / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    LinearFit { slope, intercept, r_squared, slope_stderr }
}

/// Mean and standard error of the mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

pub fn mean_estimate(values: &[f64]) -> MeanEstimate {
    let n = values.len();
    if n == 0 {
        return MeanEstimate::default();
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    MeanEstimate { mean, stderr, count: n }
}

/// Binomial proportion with its standard error.
pub fn proportion(successes: usize, trials: usize) -> MeanEstimate {
    let p = successes as f64 / trials as f64;
    MeanEstimate { mean: p, stderr: (p * (1.0 - p) / trials as f64).sqrt(), count: trials }
}

/// Empirical quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Bootstrap standard error of the `q`-quantile, deterministic in `seed`.
pub fn bootstrap_quantile_stderr(values: &[f64], q: f64, resamples: usize, seed: u64) -> f64 {
    let mut rng = StreamRng::new(seed);
    let mut buf = vec![0.0; values.len()];
    let stats: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = values[rng.below(values.len())];
            }
            buf.sort_by(f64::total_cmp);
            quantile(&buf, q)
        })
        .collect();
    let m = mean_estimate(&stats);
    m.stderr * (stats.len() as f64).sqrt()
}
