//! Order-deterministic reductions and Monte Carlo summaries.

use serde::{Deserialize, Serialize};

/// Pairwise (cascade) summation in a fixed order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Number of paths behind the estimate.
    pub n: usize,
    /// Largest `|sample|` as a fraction of `Σ|sample|`.
    pub max_sample_share: f64,
}

impl McEstimate {
    /// Plug-in estimate from independent values.
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        assert!(n >= 2, "a standard error needs at least two samples");
        let mean = pairwise_sum(values) / n as f64;
        let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = pairwise_sum(&dev) / (n - 1) as f64;
        Self { mean, std_error: (var / n as f64).sqrt(), n, max_sample_share: max_share(values) }
    }

    /// Estimate from antithetic pairs `(values[2i], values[2i+1])`: the
    /// standard error is computed from the pair means.
    pub fn from_antithetic(values: &[f64]) -> Self {
        assert!(values.len() >= 4 && values.len().is_multiple_of(2), "antithetic estimate needs at least two pairs");
        let pairs: Vec<f64> = values.chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect();
        let inner = Self::from_values(&pairs);
        Self { n: values.len(), max_sample_share: max_share(values), ..inner }
    }

    /// A value known exactly.
    pub fn exact(mean: f64, n: usize) -> Self {
        Self { mean, std_error: 0.0, n, max_sample_share: if n > 0 { 1.0 / n as f64 } else { 0.0 } }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { mean: c * self.mean, std_error: c.abs() * self.std_error, ..*self }
    }
}

fn max_share(values: &[f64]) -> f64 {
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let total = pairwise_sum(&abs);
    if total > 0.0 && total.is_finite() {
        abs.iter().cloned().fold(0.0, f64::max) / total
    } else if total.is_infinite() {
        1.0
    } else {
        0.0
    }
}

/// Standard error of `a − b` for independent estimates.
pub fn combined_se(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }

    #[test]
    fn constant_samples_have_zero_error() {
        let e = McEstimate::from_values(&[1.0; 10]);
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.std_error, 0.0);
        assert!((e.max_sample_share - 0.1).abs() < 1e-15);
        let z = McEstimate::from_values(&[0.0; 5]);
        assert_eq!((z.mean, z.std_error, z.max_sample_share), (0.0, 0.0, 0.0));
    }

    #[test]
    fn standard_error_of_small_sample() {
        let e = McEstimate::from_values(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        // sd = sqrt(5/3), se = sd/2
        assert!((e.std_error - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert!((e.max_sample_share - 0.4).abs() < 1e-15);
    }

    #[test]
    fn dominated_sample_share() {
        let mut v = vec![1e-3; 100];
        v[17] = 10.0;
        assert!(McEstimate::from_values(&v).max_sample_share > 0.5);
    }
}
