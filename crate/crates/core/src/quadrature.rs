//! Deterministic first and second moments of path integrals.
//!
//! `E[Z^k] = k! ∫_{T(k;t)} ∫ q(s; z) v(z_1)⋯v(z_k) dz ds` is evaluated by
//! nested Gauss–Legendre quadrature. The innermost spatial integral is always
//! done in closed form: the mass a potential receives from an isotropic
//! Gaussian is a chi-type probability for radial shapes and a product of
//! one-dimensional intervals for tabulated ones. What remains is
//!
//! * `k = 1`: a single time integral of that mass;
//! * `k = 2`: two ordered times and one `d`-dimensional point `z_1`, which for
//!   radial potentials is written in spherical coordinates adapted to the
//!   geometry (one, two or three effective coordinates), and for tabulated
//!   potentials is replaced by axis-wise two-time cell probabilities.
//!
//! Free moments over an infinite horizon use the time-integrated kernel
//! `G(w) = ∫₀^∞ q(s; w) ds` instead: `E[Y_x^k] = k! g_k(x)` with
//! `g_1 = Gv` and `g_j = G(v g_{j−1})`, which the shell theorem turns into
//! one-dimensional integrals for radial potentials.
//!
//! Time panels double in length away from the endpoints (starting from
//! `first_panel · R²`), so horizons from `10⁻²` to `10⁴` cost about the same.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{domain, Error, Result};
use crate::potential::{green_constant, Potential, PotentialKind};
use crate::special::{clean_breaks, graded_breaks, normal_interval, GaussLegendre};
use crate::stats::pairwise_sum;
use crate::{dist2, MIN_TRANSIENT_DIM};

/// Node counts and limits for the quadrature oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadConfig {
    /// Gauss–Legendre nodes per time panel.
    pub time_nodes: usize,
    /// Gauss–Legendre nodes per spatial panel.
    pub space_nodes: usize,
    /// Length of the panels next to a graded endpoint, in units of `R²`.
    pub first_panel: f64,
    /// Largest moment order accepted.
    pub k_max: u32,
    /// Allows `k_max = 3` (infinite-horizon free moments only).
    pub expert: bool,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self { time_nodes: 8, space_nodes: 8, first_panel: 1e-3, k_max: 2, expert: false }
    }
}

impl QuadConfig {
    pub fn expert() -> Self {
        Self { k_max: 3, expert: true, ..Self::default() }
    }

    /// The same configuration with fewer nodes, used for error estimates.
    pub fn coarser(&self) -> Self {
        Self {
            time_nodes: (self.time_nodes - 2).max(4),
            space_nodes: (self.space_nodes - 2).max(4),
            first_panel: self.first_panel * 2.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.time_nodes < 4 || self.space_nodes < 4 {
            return Err(Error::Config(format!(
                "quadrature node counts must be at least 4 (got {} time, {} space)",
                self.time_nodes, self.space_nodes
            )));
        }
        if !(self.first_panel > 0.0 && self.first_panel.is_finite()) {
            return Err(Error::Config(format!("first_panel must be positive, got {}", self.first_panel)));
        }
        let cap = if self.expert { 3 } else { 2 };
        if self.k_max > cap {
            return Err(Error::Config(format!(
                "k_max = {} exceeds {cap}{}",
                self.k_max,
                if self.expert { "" } else { " (set expert to allow 3)" }
            )));
        }
        Ok(())
    }

    fn check_order(&self, k: u32) -> Result<()> {
        self.validate()?;
        if k > self.k_max {
            return domain(format!("moment order {k} exceeds k_max = {}", self.k_max));
        }
        Ok(())
    }
}

/// A quadrature value with an error estimate from a coarser rerun.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadValue {
    pub value: f64,
    pub error: f64,
}

/// Runs `f` at `cfg` and at `cfg.coarser()`; the difference is the error
/// estimate (pessimistic for the finer value).
pub fn with_error(cfg: &QuadConfig, f: impl Fn(&QuadConfig) -> Result<f64>) -> Result<QuadValue> {
    let value = f(cfg)?;
    let coarse = f(&cfg.coarser())?;
    Ok(QuadValue { value, error: (value - coarse).abs() })
}

/// Which process runs between the sampled times.
#[derive(Debug, Clone, Copy)]
enum Law<'a> {
    Free,
    Bridge { y: &'a [f64], t: f64 },
}

impl Law<'_> {
    /// Mean and standard deviation of the position at `s` started from `x`
    /// at time 0.
    fn marginal(&self, x: &[f64], s: f64) -> (Vec<f64>, f64) {
        match *self {
            Law::Free => (x.to_vec(), s.sqrt()),
            Law::Bridge { y, t } => {
                let f = s / t;
                let mean = x.iter().zip(y).map(|(a, b)| a + f * (b - a)).collect();
                (mean, (s * (t - s) / t).sqrt())
            }
        }
    }

    /// Conditional law of the position at `s2` given position `z` at `s1`:
    /// mean `(1 − β) z + β y`, standard deviation returned second.
    fn transition(&self, s1: f64, s2: f64) -> (f64, f64) {
        match *self {
            Law::Free => (0.0, (s2 - s1).sqrt()),
            Law::Bridge { t, .. } => {
                let beta = (s2 - s1) / (t - s1);
                (beta, ((s2 - s1) * (t - s2) / (t - s1)).sqrt())
            }
        }
    }

    fn graded_right(&self) -> bool {
        matches!(self, Law::Bridge { .. })
    }
}

/// `E[Y_x(T)^k]` for free motion, `T = ∞` allowed.
pub fn moment_free(x: &[f64], horizon: f64, v: &Potential, k: u32, cfg: &QuadConfig) -> Result<f64> {
    cfg.check_order(k)?;
    check_point(x, v, "start point")?;
    if !(horizon > 0.0) {
        return domain(format!("horizon must be positive, got {horizon}"));
    }
    if k == 0 {
        return Ok(1.0);
    }
    if v.is_zero() {
        return Ok(0.0);
    }
    if horizon.is_infinite() {
        if v.dim() < MIN_TRANSIENT_DIM {
            return domain(format!(
                "infinite-horizon moments diverge in dimension {} (need d ≥ 3)",
                v.dim()
            ));
        }
        return infinite_free_moment(x, v, k, cfg);
    }
    match k {
        1 => Ok(first_moment(x, Law::Free, horizon, v, cfg)),
        2 => Ok(second_moment(x, Law::Free, horizon, v, cfg)),
        _ => Err(Error::Unsupported(format!(
            "order {k} is only available for infinite-horizon free moments"
        ))),
    }
}

/// `E[Z(t)^k]` along the bridge from `x` to `y`.
pub fn moment_bridge(x: &[f64], y: &[f64], t: f64, v: &Potential, k: u32, cfg: &QuadConfig) -> Result<f64> {
    cfg.check_order(k)?;
    check_point(x, v, "start point")?;
    check_point(y, v, "end point")?;
    if !(t > 0.0 && t.is_finite()) {
        return domain(format!("bridge horizon must be positive and finite, got {t}"));
    }
    if k == 0 {
        return Ok(1.0);
    }
    if v.is_zero() {
        return Ok(0.0);
    }
    let law = Law::Bridge { y, t };
    match k {
        1 => Ok(first_moment(x, law, t, v, cfg)),
        2 => Ok(second_moment(x, law, t, v, cfg)),
        _ => Err(Error::Unsupported(format!("bridge moments of order {k} are not implemented"))),
    }
}

/// `E[(Y_x + Y'_y)^k]` over an infinite horizon, by the binomial expansion.
pub fn moment_two_sided(x: &[f64], y: &[f64], v: &Potential, k: u32, cfg: &QuadConfig) -> Result<f64> {
    moment_two_sided_at(x, y, f64::INFINITY, v, k, cfg)
}

/// `E[(Y_x(T) + Y'_y(T))^k]` for a common horizon `T` (`∞` allowed).
pub fn moment_two_sided_at(x: &[f64], y: &[f64], horizon: f64, v: &Potential, k: u32, cfg: &QuadConfig) -> Result<f64> {
    let mx: Vec<f64> = (0..=k).map(|j| moment_free(x, horizon, v, j, cfg)).collect::<Result<_>>()?;
    let my: Vec<f64> = if x == y {
        mx.clone()
    } else {
        (0..=k).map(|j| moment_free(y, horizon, v, j, cfg)).collect::<Result<_>>()?
    };
    Ok((0..=k).map(|j| binomial(k, j) * mx[j as usize] * my[(k - j) as usize]).sum())
}

/// `[E(Y_x(t) + Y'_y(t))^k − E(Y_x(u) + Y'_y(u))^k] / k!`, the part of the
/// two-sided moment accumulated after the window `u`.
pub fn d_diagnostic(x: &[f64], y: &[f64], t: f64, u: f64, v: &Potential, k: u32, cfg: &QuadConfig) -> Result<f64> {
    if !(u > 0.0) || u > t {
        return domain(format!("window u = {u} must lie in (0, t] with t = {t}"));
    }
    if u == t {
        cfg.check_order(k)?;
        return Ok(0.0);
    }
    let full = moment_two_sided_at(x, y, t, v, k, cfg)?;
    let window = moment_two_sided_at(x, y, u, v, k, cfg)?;
    Ok((full - window) / factorial(k))
}

fn check_point(p: &[f64], v: &Potential, what: &str) -> Result<()> {
    if p.len() != v.dim() {
        return domain(format!("{what} has dimension {}, potential has {}", p.len(), v.dim()));
    }
    if p.iter().any(|c| !c.is_finite()) {
        return domain(format!("{what} is not finite"));
    }
    Ok(())
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

/// Quadrature nodes on `[a, b]` with panels graded towards the flagged ends.
fn time_nodes(a: f64, b: f64, first: f64, left: bool, right: bool, rule: &GaussLegendre) -> Vec<(f64, f64)> {
    let breaks = graded_breaks(a, b, first, left, right);
    panel_nodes(&breaks, rule)
}

fn panel_nodes(breaks: &[f64], rule: &GaussLegendre) -> Vec<(f64, f64)> {
    breaks.windows(2).flat_map(|w| rule.mapped(w[0], w[1])).collect()
}

fn first_panel(v: &Potential, cfg: &QuadConfig) -> f64 {
    let r = v.support_radius();
    cfg.first_panel * (r * r).max(f64::MIN_POSITIVE)
}

fn first_moment(x: &[f64], law: Law<'_>, horizon: f64, v: &Potential, cfg: &QuadConfig) -> f64 {
    let rule = GaussLegendre::new(cfg.time_nodes);
    let nodes = time_nodes(0.0, horizon, first_panel(v, cfg), true, law.graded_right(), &rule);
    let terms: Vec<f64> = nodes
        .iter()
        .map(|&(s, w)| {
            let (mean, sd) = law.marginal(x, s);
            w * v.gaussian_mass(&mean, sd)
        })
        .collect();
    pairwise_sum(&terms)
}

fn second_moment(x: &[f64], law: Law<'_>, horizon: f64, v: &Potential, cfg: &QuadConfig) -> f64 {
    let time_rule = GaussLegendre::new(cfg.time_nodes);
    let h0 = first_panel(v, cfg);
    let outer = time_nodes(0.0, horizon, h0, true, law.graded_right(), &time_rule);
    let inner_at = |s1: f64| time_nodes(s1, horizon, h0, true, law.graded_right(), &time_rule);
    let terms: Vec<f64> = match v.kind() {
        PotentialKind::Tabulated { .. } => {
            let grid = CellGrid::new(v);
            outer
                .par_iter()
                .map(|&(s1, w1)| w1 * grid.two_time_slab(x, law, s1, &inner_at(s1), cfg))
                .collect()
        }
        _ => {
            let space_rule = GaussLegendre::new(cfg.space_nodes);
            outer
                .par_iter()
                .map(|&(s1, w1)| w1 * radial_slab(x, law, s1, &inner_at(s1), v, &space_rule))
                .collect()
        }
    };
    2.0 * pairwise_sum(&terms)
}

/// Area of the unit sphere `S^n ⊂ R^{n+1}`.
fn sphere_area(n: usize) -> f64 {
    let m = 0.5 * (n + 1) as f64;
    2.0 * std::f64::consts::PI.powf(m) / gamma(m)
}

/// A point `z_1 = c + w` of the spatial rule, stored by the coordinates the
/// integrand depends on.
struct SpaceNode {
    weight: f64,
    r2: f64,
    /// `w · e_1`
    along: f64,
    /// `w · e_2`
    across: f64,
}

/// `∫_{s1}^{H} ∫ v(z_1) N(z_1; m(s1), σ(s1)²) M(z_1; s1, s2) dz_1 ds2` for a
/// radial potential, where `M` is the mass `v` receives from the law of the
/// position at `s2` given `z_1` at `s1`.
fn radial_slab(x: &[f64], law: Law<'_>, s1: f64, inner: &[(f64, f64)], v: &Potential, rule: &GaussLegendre) -> f64 {
    let d = v.dim();
    let c = v.center();
    let (mean, sd) = law.marginal(x, s1);
    let a: Vec<f64> = mean.iter().zip(c).map(|(m, ci)| m - ci).collect();
    let b: Vec<f64> = match law {
        Law::Bridge { y, .. } => y.iter().zip(c).map(|(yi, ci)| yi - ci).collect(),
        Law::Free => vec![0.0; d],
    };
    let scale = v.support_radius().max(sd);
    let rho_a = a.iter().map(|p| p * p).sum::<f64>().sqrt();
    let nb = b.iter().map(|p| p * p).sum::<f64>().sqrt();
    let tiny = 1e-14 * scale.max(nb);
    // orthonormal frame: e1 along the Gaussian mean, e2 along the rest of b
    let e1: Option<Vec<f64>> = if rho_a > tiny {
        Some(a.iter().map(|p| p / rho_a).collect())
    } else if nb > tiny {
        Some(b.iter().map(|p| p / nb).collect())
    } else {
        None
    };
    let (b1, b2) = match &e1 {
        Some(e) => {
            let b1: f64 = b.iter().zip(e).map(|(p, q)| p * q).sum();
            let perp2 = (nb * nb - b1 * b1).max(0.0);
            (b1, perp2.sqrt())
        }
        None => (0.0, 0.0),
    };
    let rank = match (&e1, b2 > tiny && d >= 3) {
        (None, _) => 0,
        (Some(_), false) => 1,
        (Some(_), true) => 2,
    };
    let rank = rank.min(d - 1);
    let mut nodes = space_nodes(v, rho_a, sd, rank, rule);
    if matches!(law, Law::Free) {
        nodes = collapse_radially(nodes);
    }
    if nodes.is_empty() {
        return 0.0;
    }
    let b_norm2 = nb * nb;
    let terms: Vec<f64> = inner
        .iter()
        .map(|&(s2, w2)| {
            let (beta, sd2) = law.transition(s1, s2);
            let keep = 1.0 - beta;
            let acc: f64 = nodes
                .iter()
                .map(|n| {
                    let dot = n.along * b1 + n.across * b2;
                    let rho2 = (keep * keep * n.r2 + 2.0 * beta * keep * dot + beta * beta * b_norm2).max(0.0);
                    n.weight * v.radial_mass(rho2.sqrt(), sd2)
                })
                .sum();
            w2 * acc
        })
        .collect();
    pairwise_sum(&terms)
}

/// Merges nodes sharing a radius; valid when the integrand sees `|w|` only.
fn collapse_radially(nodes: Vec<SpaceNode>) -> Vec<SpaceNode> {
    let mut out: Vec<SpaceNode> = Vec::new();
    for n in nodes {
        match out.last_mut() {
            Some(last) if last.r2 == n.r2 => last.weight += n.weight,
            _ => out.push(SpaceNode { along: 0.0, across: 0.0, ..n }),
        }
    }
    out
}

/// Spatial rule for `v(c + w) N(w; a, σ²)` with `|a| = rho_a`, peaked
/// panels around the Gaussian mean when `σ` is small.
fn space_nodes(v: &Potential, rho_a: f64, sd: f64, rank: usize, rule: &GaussLegendre) -> Vec<SpaceNode> {
    use std::f64::consts::PI;
    let d = v.dim();
    let df = d as f64;
    let reach = 12.0 * sd;
    let norm = (2.0 * PI * sd * sd).powf(-0.5 * df);
    let ladder = [1.0, 2.5, 5.0];
    let mut out = Vec::new();
    let shells = v.shells().expect("radial potential");
    for sh in shells.iter().filter(|s| s.height != 0.0) {
        let lo = sh.inner.max(rho_a - reach);
        let hi = sh.outer.min(rho_a + reach);
        if hi <= lo {
            continue;
        }
        // refine around the peak only when it is narrow compared to the shell
        let mut rb: Vec<f64> = Vec::new();
        for j in ladder.iter().filter(|&&j| j * sd < 0.5 * (sh.outer - sh.inner)) {
            rb.push(rho_a - j * sd);
            rb.push(rho_a + j * sd);
        }
        rb.push(rho_a);
        let rbreaks = clean_breaks(lo, hi, rb);
        for (r, wr) in panel_nodes(&rbreaks, rule) {
            let radial = sh.height * wr * r.powi(d as i32 - 1) * norm;
            let base = r * r + rho_a * rho_a;
            if rank == 0 {
                let g = (-0.5 * base / (sd * sd)).exp();
                if g > 0.0 {
                    out.push(SpaceNode { weight: radial * sphere_area(d - 1) * g, r2: r * r, along: 0.0, across: 0.0 });
                }
                continue;
            }
            // polar angle from e1; the Gaussian only sees this one
            let cos_max = if rho_a > 0.0 && r > 0.0 {
                (base - reach * reach) / (2.0 * r * rho_a)
            } else {
                -1.0
            };
            if cos_max > 1.0 {
                continue;
            }
            let theta_max = cos_max.clamp(-1.0, 1.0).acos();
            let mut tb = Vec::new();
            if rho_a > 0.0 && r > 0.0 {
                let step = sd / (r * rho_a).sqrt();
                tb.extend(ladder.iter().map(|j| j * step).filter(|&a| a < 0.25 * PI));
            }
            tb.push(0.5 * PI);
            let tbreaks = clean_breaks(0.0, theta_max, tb);
            for (th, wt) in panel_nodes(&tbreaks, rule) {
                let (st, ct) = th.sin_cos();
                let g = (-0.5 * (base - 2.0 * r * rho_a * ct) / (sd * sd)).exp();
                if g == 0.0 {
                    continue;
                }
                let w = radial * wt * st.powi(d as i32 - 2) * g;
                if rank == 1 {
                    out.push(SpaceNode { weight: w * sphere_area(d - 2), r2: r * r, along: r * ct, across: 0.0 });
                } else {
                    for (ph, wp) in rule.mapped(0.0, 0.5 * PI).chain(rule.mapped(0.5 * PI, PI)) {
                        let (sp, cp) = ph.sin_cos();
                        out.push(SpaceNode {
                            weight: w * wp * sp.powi(d as i32 - 3) * sphere_area(d - 3),
                            r2: r * r,
                            along: r * ct,
                            across: r * st * cp,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Cell geometry of a tabulated potential.
struct CellGrid {
    shape: Vec<usize>,
    values: Vec<f64>,
    /// Per axis, the `(lo, hi)` of every cell.
    edges: Vec<Vec<(f64, f64)>>,
}

impl CellGrid {
    fn new(v: &Potential) -> Self {
        let PotentialKind::Tabulated { origin, spacing, shape, values } = v.kind() else {
            unreachable!("cell grid of a radial potential")
        };
        let edges = (0..v.dim())
            .map(|a| {
                (0..shape[a])
                    .map(|i| {
                        let lo = origin[a] + spacing[a] * (i as f64 - 0.5);
                        (lo, lo + spacing[a])
                    })
                    .collect()
            })
            .collect();
        Self { shape: shape.clone(), values: values.clone(), edges }
    }

    /// `P(X_a ∈ cell i, X'_a ∈ cell j)` on one axis, with
    /// `X_a ~ N(m, σ²)` and `X'_a | X_a = z ~ N((1−β) z + β y_a, σ₂²)`.
    fn axis_matrix(&self, a: usize, m: f64, sd: f64, beta: f64, ya: f64, sd2: f64, rule: &GaussLegendre) -> Vec<f64> {
        let cells = &self.edges[a];
        let n = cells.len();
        let mut out = vec![0.0; n * n];
        let reach = 12.0 * sd;
        for (i, &(lo, hi)) in cells.iter().enumerate() {
            let lo = lo.max(m - reach);
            let hi = hi.min(m + reach);
            if hi <= lo {
                continue;
            }
            let pts: Vec<f64> = [-4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0].iter().map(|j| m + j * sd).collect();
            let breaks = clean_breaks(lo, hi, pts);
            for (z, w) in panel_nodes(&breaks, rule) {
                let u = (z - m) / sd;
                let dens = w * (-0.5 * u * u).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
                let mu = (1.0 - beta) * z + beta * ya;
                for (j, &(lj, hj)) in cells.iter().enumerate() {
                    let p = if sd2 > 0.0 {
                        normal_interval((lj - mu) / sd2, (hj - mu) / sd2)
                    } else if mu >= lj && mu < hj {
                        1.0
                    } else {
                        0.0
                    };
                    out[i * n + j] += dens * p;
                }
            }
        }
        out
    }

    /// `Σ_{I,J} v_I v_J ∏_a P_a[I_a, J_a]`, contracting one axis at a time.
    fn contract(&self, mats: &[Vec<f64>]) -> f64 {
        let mut u = self.values.clone();
        let d = self.shape.len();
        for a in 0..d {
            let n = self.shape[a];
            let inner: usize = self.shape[a + 1..].iter().product();
            let outer: usize = self.shape[..a].iter().product();
            let mut next = vec![0.0; u.len()];
            for o in 0..outer {
                for i in 0..n {
                    for j in 0..n {
                        let p = mats[a][i * n + j];
                        if p == 0.0 {
                            continue;
                        }
                        let dst = (o * n + i) * inner;
                        let src = (o * n + j) * inner;
                        for q in 0..inner {
                            next[dst + q] += p * u[src + q];
                        }
                    }
                }
            }
            u = next;
        }
        self.values.iter().zip(&u).map(|(p, q)| p * q).sum()
    }

    fn two_time_slab(&self, x: &[f64], law: Law<'_>, s1: f64, inner: &[(f64, f64)], cfg: &QuadConfig) -> f64 {
        let rule = GaussLegendre::new(cfg.space_nodes);
        let (mean, sd) = law.marginal(x, s1);
        let y: Vec<f64> = match law {
            Law::Bridge { y, .. } => y.to_vec(),
            Law::Free => vec![0.0; x.len()],
        };
        let terms: Vec<f64> = inner
            .iter()
            .map(|&(s2, w2)| {
                let (beta, sd2) = law.transition(s1, s2);
                let mats: Vec<Vec<f64>> = (0..self.shape.len())
                    .map(|a| self.axis_matrix(a, mean[a], sd, beta, y[a], sd2, &rule))
                    .collect();
                w2 * self.contract(&mats)
            })
            .collect();
        pairwise_sum(&terms)
    }
}

/// `k! g_k(x)` with `g_1 = Gv`, `g_j = G(v g_{j−1})`.
fn infinite_free_moment(x: &[f64], v: &Potential, k: u32, cfg: &QuadConfig) -> Result<f64> {
    if k == 1 {
        return v.green_potential(x);
    }
    match v.kind() {
        PotentialKind::Tabulated { .. } => {
            if k > 2 {
                return Err(Error::Unsupported(format!(
                    "order {k} infinite-horizon moments need a radial potential"
                )));
            }
            Ok(2.0 * tabulated_green_weighted(v, x, cfg))
        }
        _ => {
            let rho = dist2(x, v.center()).sqrt();
            let rule = GaussLegendre::new(cfg.space_nodes.max(8));
            Ok(factorial(k) * iterated_green(v, k, rho, &rule))
        }
    }
}

/// `g_k(ρ)` for a radial potential, by the shell theorem
/// `G(f)(ρ) = (2/(d−2)) ∫ f(r) r^{d−1} max(r, ρ)^{2−d} dr` for radial `f`.
fn iterated_green(v: &Potential, k: u32, rho: f64, rule: &GaussLegendre) -> f64 {
    if k == 1 {
        return v.radial_green(rho);
    }
    let d = v.dim() as f64;
    let shells = v.shells().expect("radial potential");
    let mut acc = 0.0;
    for sh in shells.iter().filter(|s| s.height != 0.0) {
        let breaks = clean_breaks(sh.inner, sh.outer, vec![rho]);
        for (r, w) in panel_nodes(&breaks, rule) {
            let kernel = r.powf(d - 1.0) * r.max(rho).powf(2.0 - d);
            acc += w * sh.height * kernel * iterated_green(v, k - 1, r, rule);
        }
    }
    2.0 / (d - 2.0) * acc
}

/// `∫ v(z) G(x − z) (Gv)(z) dz` for a tabulated potential, bisecting cells
/// near the singularity at `x`.
fn tabulated_green_weighted(v: &Potential, x: &[f64], cfg: &QuadConfig) -> f64 {
    let grid = CellGrid::new(v);
    let d = v.dim();
    let c = green_constant(d);
    let rule = GaussLegendre::new(cfg.space_nodes.min(6));
    let mut idx = vec![0usize; d];
    let mut cells = Vec::new();
    for &val in &grid.values {
        if val != 0.0 {
            let lo: Vec<f64> = (0..d).map(|a| grid.edges[a][idx[a]].0).collect();
            let hi: Vec<f64> = (0..d).map(|a| grid.edges[a][idx[a]].1).collect();
            cells.push((val, lo, hi));
        }
        for a in (0..d).rev() {
            idx[a] += 1;
            if idx[a] < grid.shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    let terms: Vec<f64> = cells
        .par_iter()
        .map(|(val, lo, hi)| {
            val * singular_box(lo, hi, x, 0, &rule, &|z| {
                c * dist2(z, x).powf(1.0 - 0.5 * d as f64) * v.green_potential(z).unwrap_or(0.0)
            })
        })
        .collect();
    pairwise_sum(&terms)
}

const SINGULAR_DEPTH: usize = 5;

fn singular_box(lo: &[f64], hi: &[f64], x: &[f64], depth: usize, rule: &GaussLegendre, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let d = lo.len();
    let diag2: f64 = lo.iter().zip(hi).map(|(a, b)| (b - a) * (b - a)).sum();
    let gap2: f64 = (0..d)
        .map(|a| {
            let g = (lo[a] - x[a]).max(x[a] - hi[a]).max(0.0);
            g * g
        })
        .sum();
    if gap2 > 2.25 * diag2 || depth == SINGULAR_DEPTH {
        let axes: Vec<Vec<(f64, f64)>> = (0..d).map(|a| rule.mapped(lo[a], hi[a]).collect()).collect();
        let n = rule.len();
        let mut idx = vec![0usize; d];
        let mut z = vec![0.0; d];
        let mut acc = 0.0;
        for _ in 0..n.pow(d as u32) {
            let mut w = 1.0;
            for a in 0..d {
                z[a] = axes[a][idx[a]].0;
                w *= axes[a][idx[a]].1;
            }
            acc += w * f(&z);
            for a in (0..d).rev() {
                idx[a] += 1;
                if idx[a] < n {
                    break;
                }
                idx[a] = 0;
            }
        }
        return acc;
    }
    let mut total = 0.0;
    for corner in 0..(1usize << d) {
        let mut clo = lo.to_vec();
        let mut chi = hi.to_vec();
        for a in 0..d {
            let mid = 0.5 * (lo[a] + hi[a]);
            if corner >> a & 1 == 0 {
                chi[a] = mid;
            } else {
                clo[a] = mid;
            }
        }
        total += singular_box(&clo, &chi, x, depth + 1, rule, f);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Potential {
        Potential::unit_ball(3).unwrap()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn infinite_horizon_unit_ball() {
        let cfg = QuadConfig::default();
        let m1 = moment_free(&[0.0; 3], f64::INFINITY, &unit(), 1, &cfg).unwrap();
        assert!((m1 - 1.0).abs() < 1e-12);
        let m2 = moment_free(&[0.0; 3], f64::INFINITY, &unit(), 2, &cfg).unwrap();
        assert!((m2 - 5.0 / 3.0).abs() < 1e-12, "{m2}");
    }

    #[test]
    fn finite_horizon_free_first_moment() {
        // mpmath: ∫₀ᵀ P(|√s N₃| ≤ 1) ds
        let cfg = QuadConfig::default();
        for (t, want) in [
            (1.0, 0.516_058_550_961_713_3),
            (20.0, 0.881_649_929_050_52),
            (100.0, 0.946_860_831_311_503),
            (1e4, 0.994_680_822_786_381_7),
        ] {
            let got = moment_free(&[0.0; 3], t, &unit(), 1, &cfg).unwrap();
            assert!(close(got, want, 1e-9), "T={t}: {got} vs {want}");
        }
    }

    #[test]
    fn bridge_first_moment_oracle() {
        // mpmath: ∫₀ᵗ P(|σ(s) N₃| ≤ 1) ds with σ² = s(t−s)/t
        let cfg = QuadConfig::default();
        for (t, want) in [(10.0, 1.812_692_469_220_18), (1000.0, 1.998_001_332_666_93)] {
            let got = moment_bridge(&[0.0; 3], &[0.0; 3], t, &unit(), 1, &cfg).unwrap();
            assert!(close(got, want, 1e-9), "t={t}: {got}");
        }
    }

    #[test]
    fn constant_integrand_recovers_simplex_volume() {
        // v ≡ 1 on every point the process can plausibly reach: E Z^k = t^k
        let big = Potential::ball(3, 1e3, 1.0).unwrap();
        let cfg = QuadConfig::default();
        for t in [0.5, 3.0] {
            let m1 = moment_bridge(&[0.0; 3], &[0.2, 0.0, 0.0], t, &big, 1, &cfg).unwrap();
            assert!(close(m1, t, 1e-8), "{m1}");
            let m2 = moment_bridge(&[0.0; 3], &[0.2, 0.0, 0.0], t, &big, 2, &cfg).unwrap();
            assert!(close(m2, t * t, 1e-8), "{m2}");
            let f2 = moment_free(&[0.0; 3], t, &big, 2, &cfg).unwrap();
            assert!(close(f2, t * t, 1e-8), "{f2}");
        }
    }

    #[test]
    fn reversal_symmetry() {
        let cfg = QuadConfig::default();
        let v = Potential::ball(3, 1.0, 1.0).unwrap().translated(&[0.3, 0.1, 0.0]);
        let x = [0.5, 0.0, 0.0];
        let y = [-0.2, 0.4, 0.3];
        let a = moment_bridge(&x, &y, 2.0, &v, 1, &cfg).unwrap();
        let b = moment_bridge(&y, &x, 2.0, &v, 1, &cfg).unwrap();
        assert!(close(a, b, 1e-9), "k=1: {a} vs {b}");
        // collinear with the center: the second moment runs on two coordinates
        let u = unit();
        let (p, q) = ([0.5, 0.0, 0.0], [0.0; 3]);
        let a = moment_bridge(&p, &q, 2.0, &u, 2, &cfg).unwrap();
        let b = moment_bridge(&q, &p, 2.0, &u, 2, &cfg).unwrap();
        assert!(close(a, b, 1e-7), "k=2: {a} vs {b}");
        // general position needs all three; checked at a coarse setting
        let coarse = QuadConfig { time_nodes: 4, space_nodes: 4, first_panel: 1e-2, ..cfg };
        let a = moment_bridge(&x, &y, 2.0, &v, 2, &coarse).unwrap();
        let b = moment_bridge(&y, &x, 2.0, &v, 2, &coarse).unwrap();
        assert!(close(a, b, 1e-4), "k=2 general: {a} vs {b}");
    }

    #[test]
    fn zero_potential_and_order_limits() {
        let cfg = QuadConfig::default();
        let zero = Potential::zero(3).unwrap();
        assert_eq!(moment_bridge(&[0.0; 3], &[1.0, 0.0, 0.0], 5.0, &zero, 2, &cfg).unwrap(), 0.0);
        assert_eq!(moment_free(&[0.0; 3], f64::INFINITY, &zero, 1, &cfg).unwrap(), 0.0);
        assert_eq!(moment_two_sided(&[0.0; 3], &[0.0; 3], &zero, 2, &cfg).unwrap(), 0.0);
        assert!(moment_free(&[0.0; 3], 1.0, &unit(), 3, &cfg).is_err());
        let bad = QuadConfig { k_max: 3, ..QuadConfig::default() };
        assert!(bad.validate().is_err());
        let few = QuadConfig { time_nodes: 3, ..QuadConfig::default() };
        assert!(few.validate().is_err());
    }

    #[test]
    fn expert_third_moment() {
        // E Y₀³ = 6 g₃(0) for the unit ball: g₂(r) = 5/6 − r²/3 + r⁴/30 inside,
        // g₃(0) = 2∫₀¹ r g₂(r) dr = 61/90
        let cfg = QuadConfig::expert();
        let m3 = moment_free(&[0.0; 3], f64::INFINITY, &unit(), 3, &cfg).unwrap();
        let want = 61.0 / 15.0;
        assert!(close(m3, want, 1e-10), "{m3} vs {want}");
        assert!(moment_bridge(&[0.0; 3], &[0.0; 3], 1.0, &unit(), 3, &cfg).is_err());
    }

    #[test]
    fn two_sided_is_binomial() {
        let cfg = QuadConfig::default();
        let v = unit();
        let x = [0.5, 0.0, 0.0];
        let y = [0.0, 2.0, 0.0];
        let ex = moment_free(&x, f64::INFINITY, &v, 1, &cfg).unwrap();
        let ey = moment_free(&y, f64::INFINITY, &v, 1, &cfg).unwrap();
        let ex2 = moment_free(&x, f64::INFINITY, &v, 2, &cfg).unwrap();
        let ey2 = moment_free(&y, f64::INFINITY, &v, 2, &cfg).unwrap();
        let m1 = moment_two_sided(&x, &y, &v, 1, &cfg).unwrap();
        let m2 = moment_two_sided(&x, &y, &v, 2, &cfg).unwrap();
        assert!(close(m1, ex + ey, 1e-14));
        assert!(close(m2, ex2 + 2.0 * ex * ey + ey2, 1e-14));
        assert!(close(moment_two_sided(&[0.0; 3], &[0.0; 3], &v, 1, &cfg).unwrap(), 2.0, 1e-12));
    }

    #[test]
    fn far_field_decay() {
        let cfg = QuadConfig::default();
        let v = unit();
        let a = moment_free(&[10.0, 0.0, 0.0], f64::INFINITY, &v, 1, &cfg).unwrap();
        let b = moment_free(&[20.0, 0.0, 0.0], f64::INFINITY, &v, 1, &cfg).unwrap();
        assert!(close(a / b, 2.0, 1e-12));
        let v5 = Potential::unit_ball(5).unwrap();
        let mut p = vec![0.0; 5];
        p[0] = 10.0;
        let a = moment_free(&p, f64::INFINITY, &v5, 1, &cfg).unwrap();
        p[0] = 20.0;
        let b = moment_free(&p, f64::INFINITY, &v5, 1, &cfg).unwrap();
        assert!(close(a / b, 8.0, 1e-12));
    }

    #[test]
    fn finite_second_moment_approaches_infinite() {
        let cfg = QuadConfig::default();
        let v = unit();
        let x = [0.3, 0.0, 0.0];
        let inf = moment_free(&x, f64::INFINITY, &v, 2, &cfg).unwrap();
        let mut prev = 0.0;
        for t in [10.0, 100.0, 1e4] {
            let m = moment_free(&x, t, &v, 2, &cfg).unwrap();
            assert!(m > prev && m < inf, "T={t}: {m} vs {inf}");
            prev = m;
        }
        assert!((inf - prev) / inf < 0.02);
    }

    #[test]
    fn d_diagnostic_window_behaviour() {
        let cfg = QuadConfig::default();
        let v = unit();
        let o = [0.0; 3];
        assert_eq!(d_diagnostic(&o, &o, 50.0, 50.0, &v, 1, &cfg).unwrap(), 0.0);
        assert!(d_diagnostic(&o, &o, 50.0, 60.0, &v, 1, &cfg).is_err());
        let d1 = d_diagnostic(&o, &o, 1e4, 1.0, &v, 1, &cfg).unwrap();
        let d100 = d_diagnostic(&o, &o, 1e4, 100.0, &v, 1, &cfg).unwrap();
        // mpmath: 2[E Y(10⁴) − E Y(u)] for u = 1, 100
        assert!(close(d1, 0.957_244_543_649_336_8, 1e-8), "{d1}");
        assert!(close(d100, 0.095_639_982_949_757_37, 1e-7), "{d100}");
        let d10 = d_diagnostic(&o, &o, 1e4, 10.0, &v, 1, &cfg).unwrap();
        assert!(d1 > d10 && d10 > d100);
    }

    #[test]
    fn tabulated_matches_equivalent_cube() {
        // a single cell is the cube [-½, ½]³; check against MC-free facts:
        // infinite-horizon first moment at the center equals ∫ G over the cube
        let cube = Potential::new(
            3,
            PotentialKind::Tabulated {
                origin: vec![0.0; 3],
                spacing: vec![1.0; 3],
                shape: vec![1, 1, 1],
                values: vec![1.0],
            },
        )
        .unwrap();
        let cfg = QuadConfig::default();
        let m1 = moment_free(&[0.0; 3], f64::INFINITY, &cube, 1, &cfg).unwrap();
        let want = 2.380_077_363_979_553_5 / (2.0 * std::f64::consts::PI);
        assert!(close(m1, want, 1e-6), "{m1} vs {want}");
        // the split grid of eight half-cells describes the same function
        let split = Potential::new(
            3,
            PotentialKind::Tabulated {
                origin: vec![-0.25; 3],
                spacing: vec![0.5; 3],
                shape: vec![2, 2, 2],
                values: vec![1.0; 8],
            },
        )
        .unwrap();
        for t in [0.5, 4.0] {
            let a = moment_bridge(&[0.1, 0.0, 0.0], &[0.0, 0.3, 0.0], t, &cube, 2, &cfg).unwrap();
            let b = moment_bridge(&[0.1, 0.0, 0.0], &[0.0, 0.3, 0.0], t, &split, 2, &cfg).unwrap();
            assert!(close(a, b, 1e-7), "t={t}: {a} vs {b}");
        }
        let a = moment_free(&[0.0; 3], f64::INFINITY, &cube, 2, &cfg).unwrap();
        let b = moment_free(&[0.0; 3], f64::INFINITY, &split, 2, &cfg).unwrap();
        assert!(close(a, b, 1e-4), "{a} vs {b}");
    }

    #[test]
    fn radial_geometries_agree_with_tabulated_ball_surrogate() {
        // a radial step vs a translated copy must give identical moments when
        // the endpoints move with it
        let v = Potential::new(
            3,
            PotentialKind::RadialStep {
                center: vec![0.0; 3],
                breakpoints: vec![0.5, 1.0],
                heights: vec![2.0, 1.0],
            },
        )
        .unwrap();
        let shift = [0.7, -0.4, 0.2];
        let w = v.translated(&shift);
        let cfg = QuadConfig { time_nodes: 4, space_nodes: 4, first_panel: 1e-2, ..QuadConfig::default() };
        let x = [0.2, 0.1, 0.0];
        let y = [-0.3, 0.5, 0.4];
        let xs: Vec<f64> = x.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let ys: Vec<f64> = y.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let a = moment_bridge(&x, &y, 1.5, &v, 2, &cfg).unwrap();
        let b = moment_bridge(&xs, &ys, 1.5, &w, 2, &cfg).unwrap();
        assert!(close(a, b, 1e-10), "{a} vs {b}");
    }
}
