//! Special functions and quadrature rules shared by the potential and
//! quadrature modules.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::erfc;
use statrs::function::gamma::gamma_lr;

/// `Φ(b) − Φ(a)` for the standard normal, accurate in both tails.
pub fn normal_interval(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    if a >= 0.0 {
        0.5 * (erfc(a * FRAC_1_SQRT_2) - erfc(b * FRAC_1_SQRT_2))
    } else if b <= 0.0 {
        0.5 * (erfc(-b * FRAC_1_SQRT_2) - erfc(-a * FRAC_1_SQRT_2))
    } else {
        1.0 - 0.5 * (erfc(-a * FRAC_1_SQRT_2) + erfc(b * FRAC_1_SQRT_2))
    }
}

/// Probability that `|μ + σN| ≤ r` for a standard normal `N` in `R^d` and
/// `|μ| = rho`.
pub fn ball_mass(dim: usize, rho: f64, sigma: f64, r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    if sigma <= 0.0 {
        return if rho <= r { 1.0 } else { 0.0 };
    }
    // far outside or deep inside in units of sigma
    if rho - r > 40.0 * sigma {
        return 0.0;
    }
    match dim {
        1 => normal_interval((-r - rho) / sigma, (r - rho) / sigma),
        3 => ball_mass_3d(rho, sigma, r),
        _ => ball_mass_generic(dim, rho, sigma, r),
    }
}

fn ball_mass_3d(rho: f64, sigma: f64, r: f64) -> f64 {
    let a = (r - rho) / sigma;
    let b = (-r - rho) / sigma;
    let main = normal_interval(b, a);
    // σ/(ρ√2π)·[e^{−(r−ρ)²/2σ²} − e^{−(r+ρ)²/2σ²}]
    let x = r * rho / (sigma * sigma);
    let corr = if x < 1.0 {
        let sinh_over_rho = if rho == 0.0 { r / (sigma * sigma) } else { x.sinh() / rho };
        2.0 * sigma / (2.0 * PI).sqrt()
            * (-(r * r + rho * rho) / (2.0 * sigma * sigma)).exp()
            * sinh_over_rho
    } else {
        sigma / (rho * (2.0 * PI).sqrt()) * ((-0.5 * a * a).exp() - (-0.5 * b * b).exp())
    };
    (main - corr).clamp(0.0, 1.0)
}

/// General-dimension route: condition on the component along `μ`, leaving a
/// central chi-square in the remaining `d − 1` coordinates.
pub(crate) fn ball_mass_generic(dim: usize, rho: f64, sigma: f64, r: f64) -> f64 {
    if rho == 0.0 {
        return gamma_lr(0.5 * dim as f64, r * r / (2.0 * sigma * sigma));
    }
    let lo = ((-r - rho) / sigma).max(-12.0);
    let hi = ((r - rho) / sigma).min(12.0);
    if hi <= lo {
        return 0.0;
    }
    let half_dof = 0.5 * (dim - 1) as f64;
    let rule = GaussLegendre::new(24);
    // smoothstep substitution flattens the (r² − w²)^{(d−1)/2} endpoint behaviour
    let panels = 6;
    let mut total = 0.0;
    for p in 0..panels {
        let u0 = p as f64 / panels as f64;
        let u1 = (p + 1) as f64 / panels as f64;
        total += rule.integrate(u0, u1, |u| {
            let s = u * u * (3.0 - 2.0 * u);
            let ds = 6.0 * u * (1.0 - u);
            let w = lo + (hi - lo) * s;
            let along = rho + sigma * w;
            let q = (r * r - along * along) / (sigma * sigma);
            if q <= 0.0 {
                return 0.0;
            }
            let dens = (-0.5 * w * w).exp() / (2.0 * PI).sqrt();
            dens * gamma_lr(half_dof, 0.5 * q) * (hi - lo) * ds
        });
    }
    total.clamp(0.0, 1.0)
}

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss–Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        self.nodes.iter().zip(&self.weights).map(move |(x, w)| (c + h * x, h * w))
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, dp)
}

/// Sorted, deduplicated breakpoints restricted to `[a, b]`, always including
/// both ends.
pub fn clean_breaks(a: f64, b: f64, mut pts: Vec<f64>) -> Vec<f64> {
    pts.push(a);
    pts.push(b);
    pts.retain(|p| p.is_finite() && *p >= a && *p <= b);
    pts.sort_by(|p, q| p.total_cmp(q));
    let tol = 1e-13 * (b - a).abs().max(f64::MIN_POSITIVE);
    pts.dedup_by(|p, q| (*p - *q).abs() <= tol);
    pts
}

/// Breakpoints on `[a, b]` that double in length away from each end,
/// starting from `first`, mirrored about the midpoint.
pub fn graded_breaks(a: f64, b: f64, first: f64, grade_left: bool, grade_right: bool) -> Vec<f64> {
    let len = b - a;
    let mut pts = Vec::new();
    if len <= 0.0 {
        return vec![a, b];
    }
    let half = if grade_left && grade_right { 0.5 * len } else { len };
    let mut offsets = Vec::new();
    let mut h = first.min(half);
    while h < half {
        offsets.push(h);
        h *= 2.0;
    }
    if grade_left {
        pts.extend(offsets.iter().map(|o| a + o));
    }
    if grade_right {
        pts.extend(offsets.iter().map(|o| b - o));
    }
    if grade_left && grade_right {
        pts.push(a + half);
    }
    clean_breaks(a, b, pts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        for n in [1, 2, 5, 12, 24] {
            let rule = GaussLegendre::new(n);
            for p in 0..(2 * n) {
                let got = rule.integrate(0.0, 2.0, |x| x.powi(p as i32));
                let want = 2f64.powi(p as i32 + 1) / (p + 1) as f64;
                assert!((got - want).abs() < 1e-12 * want.max(1.0), "n={n} p={p}");
            }
        }
    }

    #[test]
    fn normal_interval_tails() {
        let x = normal_interval(8.0, 9.0);
        assert!(x > 0.0 && x < 1e-14);
        let got = normal_interval(-1.0, 1.0);
        assert!((got - 0.682_689_492_137_085_9).abs() < 1e-15, "{got:e}");
        assert_eq!(normal_interval(1.0, -1.0), 0.0);
    }

    #[test]
    fn ball_mass_3d_agrees_with_generic_route() {
        for &(rho, sigma, r) in &[
            (0.0, 1.0, 1.0),
            (0.3, 0.2, 1.0),
            (1.0, 0.05, 1.0),
            (2.0, 1.5, 1.0),
            (0.5, 3.0, 0.7),
            (1e-9, 0.4, 1.0),
            (0.9, 0.01, 1.0),
        ] {
            let closed = ball_mass(3, rho, sigma, r);
            let generic = ball_mass_generic(3, rho, sigma, r);
            assert!((closed - generic).abs() < 1e-9, "rho={rho} sigma={sigma}: {closed} vs {generic}");
        }
    }

    #[test]
    fn ball_mass_centred_is_chi_cdf() {
        // P(|N_3| ≤ 1)
        let want = 0.198_748_043_098_799_0;
        let got = ball_mass(3, 0.0, 1.0, 1.0);
        assert!((got - want).abs() < 1e-13, "{got:e}");
        assert!((ball_mass(5, 0.0, 1.0, 1.0) - gamma_lr(2.5, 0.5)).abs() < 1e-15);
    }

    #[test]
    fn ball_mass_limits() {
        assert_eq!(ball_mass(3, 0.5, 0.0, 1.0), 1.0);
        assert_eq!(ball_mass(3, 1.5, 0.0, 1.0), 0.0);
        assert!(ball_mass(3, 0.2, 1e-4, 1.0) > 1.0 - 1e-12);
        assert!(ball_mass(4, 0.2, 1e-3, 1.0) > 1.0 - 1e-9);
        assert!(ball_mass(3, 5.0, 1e-2, 1.0) == 0.0);
    }

    #[test]
    fn graded_breaks_cover_interval() {
        let b = graded_breaks(0.0, 100.0, 1e-3, true, true);
        assert_eq!(b[0], 0.0);
        assert_eq!(*b.last().unwrap(), 100.0);
        assert!(b.windows(2).all(|w| w[1] > w[0]));
        assert!((b[1] - 1e-3).abs() < 1e-15);
        assert!((100.0 - b[b.len() - 2] - 1e-3).abs() < 1e-12);
    }
}
