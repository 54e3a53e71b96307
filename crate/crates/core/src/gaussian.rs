//! Gaussian transition densities of Brownian motion and the Brownian bridge.
//!
//! Everything is evaluated in log space and exponentiated at the end, so
//! that densities at large `|y − x|²/t` underflow gracefully to zero instead
//! of producing `0/0`.

use std::f64::consts::PI;

use crate::error::{domain, Result};
use crate::{dist2, norm2};

/// Ordered times `0 < s₁ < … < s_k < t`, i.e. a point of the triangular set
/// `T(k; t)`. The horizon may be `+∞` for free motion.
#[derive(Debug, Clone, PartialEq)]
pub struct TimePoints {
    s: Vec<f64>,
    t: f64,
}

impl TimePoints {
    pub fn new(s: Vec<f64>, t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return domain(format!("horizon must be positive, got {t}"));
        }
        let mut prev = 0.0;
        for (i, &si) in s.iter().enumerate() {
            if !si.is_finite() || si <= prev {
                return domain(format!("times must be strictly increasing and positive (s[{i}] = {si})"));
            }
            prev = si;
        }
        if prev >= t {
            return domain(format!("last time {prev} is not below the horizon {t}"));
        }
        Ok(Self { s, t })
    }

    /// Free-motion times with no upper horizon.
    pub fn unbounded(s: Vec<f64>) -> Result<Self> {
        Self::new(s, f64::INFINITY)
    }

    /// `k` equally spaced interior times `t·j/(k+1)`.
    pub fn uniform(k: usize, t: f64) -> Result<Self> {
        let s = (1..=k).map(|j| t * j as f64 / (k + 1) as f64).collect();
        Self::new(s, t)
    }

    pub fn k(&self) -> usize {
        self.s.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.s
    }

    pub fn horizon(&self) -> f64 {
        self.t
    }

    /// `s_j` with the conventions `s₀ = 0` and `s_{k+1} = t`.
    pub fn padded(&self, j: usize) -> f64 {
        match j {
            0 => 0.0,
            j if j <= self.s.len() => self.s[j - 1],
            _ => self.t,
        }
    }

    /// The interval lengths `Δ_j s`, `j = 0..=k`.
    pub fn increments(&self) -> Vec<f64> {
        (0..=self.k()).map(|j| self.padded(j + 1) - self.padded(j)).collect()
    }

    /// The time-reversed configuration `t − s_{k+1−j}`.
    pub fn reversed(&self) -> Result<Self> {
        let s = self.s.iter().rev().map(|&si| self.t - si).collect();
        Self::new(s, self.t)
    }
}

/// A sequence of `k` points in `R^d` sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SpacePoints {
    z: Vec<Vec<f64>>,
    dim: usize,
}

impl SpacePoints {
    pub fn new(z: Vec<Vec<f64>>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return domain("dimension must be at least 1");
        }
        if let Some(p) = z.iter().find(|p| p.len() != dim) {
            return domain(format!("point of dimension {} in a {dim}-dimensional sequence", p.len()));
        }
        Ok(Self { z, dim })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.z
    }

    pub fn reversed(&self) -> Self {
        Self { z: self.z.iter().rev().cloned().collect(), dim: self.dim }
    }
}

/// `ln q(t; x)` with `|x|² = r2`.
pub fn log_transition_density_r2(t: f64, r2: f64, dim: usize) -> f64 {
    -0.5 * dim as f64 * (2.0 * PI * t).ln() - r2 / (2.0 * t)
}

/// `ln q(t; x)`.
pub fn log_transition_density(t: f64, x: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return domain(format!("transition time must be positive, got {t}"));
    }
    if x.is_empty() {
        return domain("dimension must be at least 1");
    }
    Ok(log_transition_density_r2(t, norm2(x), x.len()))
}

/// The heat kernel `q(t; x) = (2πt)^{-d/2} exp(−|x|²/(2t))`.
pub fn transition_density(t: f64, x: &[f64]) -> Result<f64> {
    log_transition_density(t, x).map(f64::exp)
}

fn check_points(x: &[f64], pts: &SpacePoints, k: usize) -> Result<()> {
    if pts.len() != k {
        return domain(format!("{} space points for {k} times", pts.len()));
    }
    if pts.dim() != x.len() {
        return domain(format!("start point has dimension {}, path points {}", x.len(), pts.dim()));
    }
    Ok(())
}

fn log_chain(x: &[f64], times: &TimePoints, pts: &SpacePoints, end: Option<&[f64]>) -> f64 {
    let d = x.len();
    let z = pts.points();
    let mut prev_s = 0.0;
    let mut prev_z = x;
    let mut acc = 0.0;
    for (si, zi) in times.times().iter().zip(z) {
        acc += log_transition_density_r2(si - prev_s, dist2(zi, prev_z), d);
        prev_s = *si;
        prev_z = zi;
    }
    if let Some(y) = end {
        acc += log_transition_density_r2(times.horizon() - prev_s, dist2(y, prev_z), d);
    }
    acc
}

/// Joint density of free motion started at `x` at the times `s₁ < … < s_k`.
pub fn free_joint_density(x: &[f64], times: &TimePoints, pts: &SpacePoints) -> Result<f64> {
    check_points(x, pts, times.k())?;
    Ok(log_chain(x, times, pts, None).exp())
}

/// Joint density of the bridge from `x` at time 0 to `y` at time `t`
/// evaluated at interior times `s₁ < … < s_k < t`.
pub fn bridge_joint_density(
    x: &[f64],
    y: &[f64],
    times: &TimePoints,
    pts: &SpacePoints,
) -> Result<f64> {
    check_points(x, pts, times.k())?;
    if y.len() != x.len() {
        return domain("start and end points differ in dimension");
    }
    if !times.horizon().is_finite() {
        return domain("bridge horizon must be finite");
    }
    let num = log_chain(x, times, pts, Some(y));
    let den = log_transition_density_r2(times.horizon(), dist2(y, x), x.len());
    Ok((num - den).exp())
}

/// Mean and per-coordinate variance of the bridge position at time `s`.
pub fn bridge_marginal(x: &[f64], y: &[f64], t: f64, s: f64) -> Result<(Vec<f64>, f64)> {
    if !(t > 0.0) || !(s > 0.0 && s < t) {
        return domain(format!("bridge time {s} outside (0, {t})"));
    }
    if y.len() != x.len() {
        return domain("start and end points differ in dimension");
    }
    let w = s / t;
    let mean = x.iter().zip(y).map(|(a, b)| a + w * (b - a)).collect();
    Ok((mean, s * (t - s) / t))
}

/// Ratio `q(t; y − x) / q(Δ_j s; Δ_j z)` with `s₀ = 0`, `s_{k+1} = t`,
/// `z₀ = x`, `z_{k+1} = y`.
///
/// This equals `(Δ_j s/t)^{d/2} exp(|Δ_j z|²/(2Δ_j s) − |y − x|²/(2t))`.
pub fn density_ratio_q(
    x: &[f64],
    y: &[f64],
    times: &TimePoints,
    pts: &SpacePoints,
    j: usize,
) -> Result<f64> {
    check_points(x, pts, times.k())?;
    let k = times.k();
    if j > k {
        return domain(format!("ratio index {j} exceeds k = {k}"));
    }
    let t = times.horizon();
    if !t.is_finite() {
        return domain("ratio needs a finite horizon");
    }
    let ds = times.padded(j + 1) - times.padded(j);
    if !(ds > 0.0) {
        return domain(format!("nonpositive time increment {ds}"));
    }
    let z = |i: usize| -> &[f64] {
        match i {
            0 => x,
            i if i <= k => &pts.points()[i - 1],
            _ => y,
        }
    };
    let dz2 = dist2(z(j + 1), z(j));
    let d = x.len() as f64;
    let log_q = 0.5 * d * (ds / t).ln() + dz2 / (2.0 * ds) - dist2(y, x) / (2.0 * t);
    Ok(log_q.exp())
}

/// `Σ_j (Δ_j s/t)^{d/2}` together with its minimum over `T(k; t)`,
/// `(k+1)^{1−d/2}`, attained at equal spacing.
pub fn jensen_lower_bound(times: &TimePoints, dim: usize) -> Result<(f64, f64)> {
    let t = times.horizon();
    if !t.is_finite() {
        return domain("convexity bound needs a finite horizon");
    }
    let p = 0.5 * dim as f64;
    let sum = times.increments().iter().map(|ds| (ds / t).powf(p)).sum();
    let bound = ((times.k() + 1) as f64).powf(1.0 - p);
    Ok((sum, bound))
}

#[cfg(test)]
mod tests {
    use super::*;

    // (2π)^{-3/2}
    const Q1_ORIGIN_3D: f64 = 0.063_493_635_934_240_969_785_763_304_934_6;
    // (2π·0.5)^{-3/2} e^{-1}, evaluated at 30 digits
    const Q_HALF_E1_3D: f64 = 0.066_066_410_128_993_839_891_868_903_828_1;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn heat_kernel_values() {
        assert!(close(transition_density(1.0, &[0.0; 3]).unwrap(), Q1_ORIGIN_3D, 1e-14));
        assert!(close(transition_density(0.5, &[1.0, 0.0, 0.0]).unwrap(), Q_HALF_E1_3D, 1e-14));
        let a = transition_density(2.0, &[0.3, -1.2, 0.7, 2.0]).unwrap();
        let b = transition_density(2.0, &[-0.3, 1.2, -0.7, -2.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn heat_kernel_rejects_nonpositive_time() {
        assert!(transition_density(0.0, &[0.0; 3]).is_err());
        assert!(transition_density(-1.0, &[0.0; 3]).is_err());
    }

    #[test]
    fn far_points_underflow_to_zero() {
        let v = transition_density(1e-3, &[100.0, 0.0, 0.0]).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn joint_density_unrolls() {
        let x = [0.1, 0.2, -0.3];
        let z1 = vec![0.5, 0.0, 0.1];
        let z2 = vec![-0.4, 0.3, 1.0];
        let one = TimePoints::unbounded(vec![0.7]).unwrap();
        let pts1 = SpacePoints::new(vec![z1.clone()], 3).unwrap();
        let dz: Vec<f64> = z1.iter().zip(&x).map(|(a, b)| a - b).collect();
        let expect = transition_density(0.7, &dz).unwrap();
        assert!(close(free_joint_density(&x, &one, &pts1).unwrap(), expect, 1e-13));

        let two = TimePoints::unbounded(vec![0.7, 1.9]).unwrap();
        let pts2 = SpacePoints::new(vec![z1.clone(), z2.clone()], 3).unwrap();
        let dz2: Vec<f64> = z2.iter().zip(&z1).map(|(a, b)| a - b).collect();
        let expect2 = expect * transition_density(1.2, &dz2).unwrap();
        assert!(close(free_joint_density(&x, &two, &pts2).unwrap(), expect2, 1e-13));
    }

    #[test]
    fn times_must_increase() {
        assert!(TimePoints::new(vec![0.5, 0.5], 1.0).is_err());
        assert!(TimePoints::new(vec![0.5, 0.2], 1.0).is_err());
        assert!(TimePoints::new(vec![0.0], 1.0).is_err());
        assert!(TimePoints::new(vec![0.5, 1.0], 1.0).is_err());
        assert!(TimePoints::new(vec![], 1.0).is_ok());
    }

    #[test]
    fn bridge_midpoint_density() {
        // k=1, s=t/2, x=y=0: value at the origin is (πt/2)^{-d/2}
        let t = 10.0;
        let times = TimePoints::new(vec![t / 2.0], t).unwrap();
        let pts = SpacePoints::new(vec![vec![0.0; 3]], 3).unwrap();
        let got = bridge_joint_density(&[0.0; 3], &[0.0; 3], &times, &pts).unwrap();
        // high-precision value of (5π)^{-3/2}
        assert!(close(got, 0.016_062_760_518_217_157_105_203_417_822, 1e-13));
        assert!(close(got, (PI * t / 2.0).powf(-1.5), 1e-13));
    }

    #[test]
    fn bridge_marginal_values() {
        let (m, v) = bridge_marginal(&[0.0; 3], &[1.0, 0.0, 0.0], 10.0, 4.0).unwrap();
        assert!(close(m[0], 0.4, 1e-15) && m[1] == 0.0 && m[2] == 0.0);
        assert!(close(v, 2.4, 1e-15));
        let (m, v) = bridge_marginal(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], 1.0, 1e-12).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-11 && v < 1e-11);
        let (_, vmid) = bridge_marginal(&[0.0; 3], &[0.0; 3], 8.0, 4.0).unwrap();
        assert_eq!(vmid, 2.0);
        for s in [1.0, 3.0, 3.9, 4.1, 7.0] {
            assert!(bridge_marginal(&[0.0; 3], &[0.0; 3], 8.0, s).unwrap().1 < vmid);
        }
        assert!(bridge_marginal(&[0.0; 3], &[0.0; 3], 8.0, 0.0).is_err());
        assert!(bridge_marginal(&[0.0; 3], &[0.0; 3], 8.0, 8.0).is_err());
    }

    #[test]
    fn ratio_without_interior_points_is_one() {
        let times = TimePoints::new(vec![], 7.5).unwrap();
        let pts = SpacePoints::new(vec![], 3).unwrap();
        let q = density_ratio_q(&[0.3, 1.0, -2.0], &[5.0, 0.1, 0.2], &times, &pts, 0).unwrap();
        assert_eq!(q, 1.0);
    }

    #[test]
    fn ratio_at_half_horizon() {
        let t = 6.0;
        let times = TimePoints::new(vec![t / 2.0], t).unwrap();
        let pts = SpacePoints::new(vec![vec![0.0; 3]], 3).unwrap();
        let q = density_ratio_q(&[0.0; 3], &[0.0; 3], &times, &pts, 0).unwrap();
        assert!(close(q, 2f64.powf(-1.5), 1e-14));
        assert!(density_ratio_q(&[0.0; 3], &[0.0; 3], &times, &pts, 2).is_err());
    }

    #[test]
    fn ratio_matches_density_quotient() {
        let times = TimePoints::new(vec![0.4, 2.5], 3.0).unwrap();
        let pts = SpacePoints::new(vec![vec![0.2, 0.1, 0.0], vec![-0.3, 0.5, 0.2]], 3).unwrap();
        let x = [0.0, 0.1, 0.2];
        let y = [1.0, -0.5, 0.0];
        let yx: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        let dz: Vec<f64> = pts.points()[1].iter().zip(&pts.points()[0]).map(|(a, b)| a - b).collect();
        let want = transition_density(3.0, &yx).unwrap() / transition_density(2.1, &dz).unwrap();
        let got = density_ratio_q(&x, &y, &times, &pts, 1).unwrap();
        assert!(close(got, want, 1e-12));
    }

    #[test]
    fn convexity_bound_equality_at_uniform_spacing() {
        let (s, b) = jensen_lower_bound(&TimePoints::uniform(1, 4.0).unwrap(), 3).unwrap();
        assert!(close(s, 0.5f64.sqrt(), 1e-14) && close(b, 0.5f64.sqrt(), 1e-14));
        let (s, b) = jensen_lower_bound(&TimePoints::uniform(2, 9.0).unwrap(), 3).unwrap();
        assert!(close(s, 3f64.powf(-0.5), 1e-14) && close(b, 3f64.powf(-0.5), 1e-14));
    }
}
