//! Bounded potentials with bounded support.
//!
//! Three shapes are supported: a constant-height ball, a radial step
//! function made of concentric shells, and a tabulated grid evaluated by
//! nearest neighbour. Radial shapes admit closed forms for both their
//! Gaussian masses and their Newtonian potentials; tabulated ones are
//! handled cell by cell.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{domain, Error, Result};
use crate::estimate::{self, Functional, McConfig, McEstimate};
use crate::special::{ball_mass, normal_interval, GaussLegendre};
use crate::{dist2, MIN_TRANSIENT_DIM};

/// Shape and parameters of a potential, as written in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialKind {
    /// `height` on the closed ball of `radius` around `center`, zero outside.
    BallIndicator { center: Vec<f64>, radius: f64, height: f64 },
    /// `heights[i]` on the shell `breakpoints[i-1] < |z − center| ≤ breakpoints[i]`
    /// (with an implicit inner radius 0), zero beyond the last breakpoint.
    RadialStep { center: Vec<f64>, breakpoints: Vec<f64>, heights: Vec<f64> },
    /// Values on a regular grid (row-major, last axis fastest); each value
    /// fills the cell of half-width `spacing/2` around its node.
    Tabulated { origin: Vec<f64>, spacing: Vec<f64>, shape: Vec<usize>, values: Vec<f64> },
}

/// Concentric shell `(inner, outer, height)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shell {
    pub inner: f64,
    pub outer: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    dim: usize,
    kind: PotentialKind,
    sup_bound: f64,
    support_radius: f64,
    center: Vec<f64>,
}

impl Potential {
    pub fn new(dim: usize, kind: PotentialKind) -> Result<Self> {
        if dim == 0 {
            return domain("dimension must be at least 1");
        }
        let bad = |m: String| Err(Error::Config(m));
        let (sup_bound, support_radius, center) = match &kind {
            PotentialKind::BallIndicator { center, radius, height } => {
                if center.len() != dim {
                    return bad(format!("ball center has dimension {}, expected {dim}", center.len()));
                }
                if !(radius.is_finite() && *radius >= 0.0) || !height.is_finite() {
                    return bad(format!("invalid ball radius {radius} or height {height}"));
                }
                let r = if *height == 0.0 { 0.0 } else { *radius };
                (height.abs(), r, center.clone())
            }
            PotentialKind::RadialStep { center, breakpoints, heights } => {
                if center.len() != dim {
                    return bad(format!("radial center has dimension {}, expected {dim}", center.len()));
                }
                if breakpoints.len() != heights.len() || breakpoints.is_empty() {
                    return bad("radial step needs one height per breakpoint".into());
                }
                let mut prev = 0.0;
                for &b in breakpoints {
                    if !(b.is_finite() && b > prev) {
                        return bad("radial breakpoints must be positive and increasing".into());
                    }
                    prev = b;
                }
                if heights.iter().any(|h| !h.is_finite()) {
                    return bad("radial heights must be finite".into());
                }
                let sup = heights.iter().fold(0.0f64, |m, h| m.max(h.abs()));
                let r = breakpoints
                    .iter()
                    .zip(heights)
                    .filter(|(_, h)| **h != 0.0)
                    .map(|(b, _)| *b)
                    .fold(0.0, f64::max);
                (sup, r, center.clone())
            }
            PotentialKind::Tabulated { origin, spacing, shape, values } => {
                if origin.len() != dim || spacing.len() != dim || shape.len() != dim {
                    return bad("tabulated grid must have one origin/spacing/shape entry per axis".into());
                }
                if spacing.iter().any(|h| !(h.is_finite() && *h > 0.0)) || shape.contains(&0) {
                    return bad("tabulated spacing must be positive and shape nonempty".into());
                }
                let n: usize = shape.iter().product();
                if values.len() != n {
                    return bad(format!("tabulated grid has {} values, expected {n}", values.len()));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return bad("tabulated values must be finite".into());
                }
                let sup = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let center: Vec<f64> = (0..dim)
                    .map(|a| origin[a] + 0.5 * spacing[a] * (shape[a] - 1) as f64)
                    .collect();
                let mut r2 = 0.0f64;
                let mut idx = vec![0usize; dim];
                for v in values {
                    if *v != 0.0 {
                        let far: f64 = (0..dim)
                            .map(|a| {
                                let node = origin[a] + spacing[a] * idx[a] as f64;
                                ((node - center[a]).abs() + 0.5 * spacing[a]).powi(2)
                            })
                            .sum();
                        r2 = r2.max(far);
                    }
                    advance(&mut idx, shape);
                }
                (sup, r2.sqrt(), center)
            }
        };
        Ok(Self { dim, kind, sup_bound, support_radius, center })
    }

    /// Height-`height` indicator of the ball of `radius` around the origin.
    pub fn ball(dim: usize, radius: f64, height: f64) -> Result<Self> {
        Self::new(dim, PotentialKind::BallIndicator { center: vec![0.0; dim], radius, height })
    }

    /// Indicator of the unit ball around the origin.
    pub fn unit_ball(dim: usize) -> Result<Self> {
        Self::ball(dim, 1.0, 1.0)
    }

    pub fn zero(dim: usize) -> Result<Self> {
        Self::ball(dim, 1.0, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    /// `K = sup |v|`.
    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    /// Radius of a ball around [`Potential::center`] containing the support.
    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn is_zero(&self) -> bool {
        self.sup_bound == 0.0
    }

    pub fn is_nonnegative(&self) -> bool {
        match &self.kind {
            PotentialKind::BallIndicator { height, .. } => *height >= 0.0,
            PotentialKind::RadialStep { heights, .. } => heights.iter().all(|h| *h >= 0.0),
            PotentialKind::Tabulated { values, .. } => values.iter().all(|v| *v >= 0.0),
        }
    }

    #[inline]
    pub fn value(&self, z: &[f64]) -> f64 {
        match &self.kind {
            PotentialKind::BallIndicator { center, radius, height } => {
                if dist2(z, center) <= radius * radius {
                    *height
                } else {
                    0.0
                }
            }
            PotentialKind::RadialStep { center, breakpoints, heights } => {
                let r2 = dist2(z, center);
                breakpoints
                    .iter()
                    .position(|b| r2 <= b * b)
                    .map_or(0.0, |i| heights[i])
            }
            PotentialKind::Tabulated { origin, spacing, shape, values } => {
                let mut flat = 0usize;
                for a in 0..self.dim {
                    let u = ((z[a] - origin[a]) / spacing[a]).round();
                    if u < 0.0 || u >= shape[a] as f64 {
                        return 0.0;
                    }
                    flat = flat * shape[a] + u as usize;
                }
                values[flat]
            }
        }
    }

    /// Shells of a radial potential, or `None` for tabulated ones.
    pub fn shells(&self) -> Option<Vec<Shell>> {
        match &self.kind {
            PotentialKind::BallIndicator { radius, height, .. } => {
                Some(vec![Shell { inner: 0.0, outer: *radius, height: *height }])
            }
            PotentialKind::RadialStep { breakpoints, heights, .. } => {
                let mut inner = 0.0;
                Some(
                    breakpoints
                        .iter()
                        .zip(heights)
                        .map(|(&outer, &height)| {
                            let s = Shell { inner, outer, height };
                            inner = outer;
                            s
                        })
                        .collect(),
                )
            }
            PotentialKind::Tabulated { .. } => None,
        }
    }

    pub fn is_radial(&self) -> bool {
        !matches!(self.kind, PotentialKind::Tabulated { .. })
    }

    /// Breakpoints in `|z − center|` at which a radial potential jumps.
    pub fn radial_breaks(&self) -> Vec<f64> {
        self.shells()
            .map(|s| s.iter().map(|sh| sh.outer).collect())
            .unwrap_or_default()
    }

    /// Axis-aligned box containing the support.
    pub fn support_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.kind {
            PotentialKind::Tabulated { origin, spacing, shape, .. } => {
                let lo = (0..self.dim).map(|a| origin[a] - 0.5 * spacing[a]).collect();
                let hi = (0..self.dim)
                    .map(|a| origin[a] + spacing[a] * (shape[a] as f64 - 0.5))
                    .collect();
                (lo, hi)
            }
            _ => {
                let r = self.support_radius;
                (
                    self.center.iter().map(|c| c - r).collect(),
                    self.center.iter().map(|c| c + r).collect(),
                )
            }
        }
    }

    fn map_kind(&self, f: impl Fn(&PotentialKind) -> PotentialKind) -> Self {
        Self::new(self.dim, f(&self.kind)).expect("transformed potential stays valid")
    }

    /// `c·v`.
    pub fn scaled_height(&self, c: f64) -> Self {
        self.map_kind(|k| match k.clone() {
            PotentialKind::BallIndicator { center, radius, height } => {
                PotentialKind::BallIndicator { center, radius, height: c * height }
            }
            PotentialKind::RadialStep { center, breakpoints, heights } => PotentialKind::RadialStep {
                center,
                breakpoints,
                heights: heights.iter().map(|h| c * h).collect(),
            },
            PotentialKind::Tabulated { origin, spacing, shape, values } => PotentialKind::Tabulated {
                origin,
                spacing,
                shape,
                values: values.iter().map(|v| c * v).collect(),
            },
        })
    }

    /// `|v|`.
    pub fn abs(&self) -> Self {
        self.map_kind(|k| match k.clone() {
            PotentialKind::BallIndicator { center, radius, height } => {
                PotentialKind::BallIndicator { center, radius, height: height.abs() }
            }
            PotentialKind::RadialStep { center, breakpoints, heights } => PotentialKind::RadialStep {
                center,
                breakpoints,
                heights: heights.iter().map(|h| h.abs()).collect(),
            },
            PotentialKind::Tabulated { origin, spacing, shape, values } => PotentialKind::Tabulated {
                origin,
                spacing,
                shape,
                values: values.iter().map(|v| v.abs()).collect(),
            },
        })
    }

    /// `v(· − shift)`.
    pub fn translated(&self, shift: &[f64]) -> Self {
        let mv = |p: &[f64]| p.iter().zip(shift).map(|(a, b)| a + b).collect::<Vec<_>>();
        self.map_kind(|k| match k.clone() {
            PotentialKind::BallIndicator { center, radius, height } => {
                PotentialKind::BallIndicator { center: mv(&center), radius, height }
            }
            PotentialKind::RadialStep { center, breakpoints, heights } => {
                PotentialKind::RadialStep { center: mv(&center), breakpoints, heights }
            }
            PotentialKind::Tabulated { origin, spacing, shape, values } => {
                PotentialKind::Tabulated { origin: mv(&origin), spacing, shape, values }
            }
        })
    }

    /// `c · v(z/λ)`: lengths multiplied by `λ`, heights by `c`.
    fn stretched(&self, lambda: f64, c: f64) -> Self {
        let sc = |p: &[f64]| p.iter().map(|a| a * lambda).collect::<Vec<_>>();
        self.map_kind(|k| match k.clone() {
            PotentialKind::BallIndicator { center, radius, height } => PotentialKind::BallIndicator {
                center: sc(&center),
                radius: radius * lambda,
                height: c * height,
            },
            PotentialKind::RadialStep { center, breakpoints, heights } => PotentialKind::RadialStep {
                center: sc(&center),
                breakpoints: sc(&breakpoints),
                heights: heights.iter().map(|h| c * h).collect(),
            },
            PotentialKind::Tabulated { origin, spacing, shape, values } => PotentialKind::Tabulated {
                origin: sc(&origin),
                spacing: sc(&spacing),
                shape,
                values: values.iter().map(|v| c * v).collect(),
            },
        })
    }

    /// `v(·/λ)`: the support dilated by `λ` about the origin.
    pub fn dilated(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return domain(format!("dilation factor must be positive, got {lambda}"));
        }
        Ok(self.stretched(lambda, 1.0))
    }

    /// `λ² v(λ ·)`, the potential seen by Brownian motion after the
    /// substitution `W_s = λ W'_{s/λ²}`.
    pub fn brownian_rescaled(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return domain(format!("scale factor must be positive, got {lambda}"));
        }
        Ok(self.stretched(1.0 / lambda, lambda * lambda))
    }

    /// `∫ v(z) N(z; mean, σ² I) dz`.
    pub fn gaussian_mass(&self, mean: &[f64], sigma: f64) -> f64 {
        match &self.kind {
            PotentialKind::Tabulated { origin, spacing, shape, values } => {
                tabulated_mass(self.dim, origin, spacing, shape, values, mean, sigma)
            }
            _ => self.radial_mass(dist2(mean, &self.center).sqrt(), sigma),
        }
    }

    /// Gaussian mass of a radial potential for a mean at distance `rho`
    /// from its center.
    #[inline]
    pub fn radial_mass(&self, rho: f64, sigma: f64) -> f64 {
        match &self.kind {
            PotentialKind::BallIndicator { radius, height, .. } => height * ball_mass(self.dim, rho, sigma, *radius),
            PotentialKind::RadialStep { breakpoints, heights, .. } => {
                let mut prev = 0.0;
                let mut acc = 0.0;
                for (&outer, &h) in breakpoints.iter().zip(heights) {
                    let f = ball_mass(self.dim, rho, sigma, outer);
                    acc += h * (f - prev);
                    prev = f;
                }
                acc
            }
            PotentialKind::Tabulated { .. } => panic!("radial mass of a tabulated potential"),
        }
    }

    /// Newtonian potential `∫ v(z) G(z − y) dz` with
    /// `G(w) = ∫₀^∞ q(s; w) ds = Γ(d/2 − 1)/(2π^{d/2}) |w|^{2−d}`.
    pub fn green_potential(&self, y: &[f64]) -> Result<f64> {
        if self.dim < MIN_TRANSIENT_DIM {
            return domain(format!(
                "the time-integrated heat kernel diverges in dimension {} (need d ≥ 3)",
                self.dim
            ));
        }
        match &self.kind {
            PotentialKind::Tabulated { .. } => Ok(self.tabulated_green(y)),
            _ => Ok(self.radial_green(dist2(y, &self.center).sqrt())),
        }
    }

    /// Radial Newtonian potential at distance `rho` from the center, by the
    /// shell theorem: a uniform shell of radius `r` averages `|w|^{2−d}` to
    /// `max(r, ρ)^{2−d}`.
    pub fn radial_green(&self, rho: f64) -> f64 {
        let d = self.dim as f64;
        let shells = self.shells().expect("radial potential");
        let c = 2.0 / (d - 2.0);
        c * shells
            .iter()
            .map(|sh| sh.height * shell_green(sh.inner, sh.outer, rho, self.dim))
            .sum::<f64>()
    }

    fn tabulated_green(&self, y: &[f64]) -> f64 {
        let PotentialKind::Tabulated { origin, spacing, shape, values } = &self.kind else {
            unreachable!()
        };
        let d = self.dim;
        let c = green_constant(d);
        let rule = GaussLegendre::new(4);
        let fine = GaussLegendre::new(6);
        let mut idx = vec![0usize; d];
        let mut acc = 0.0;
        for v in values {
            if *v != 0.0 {
                let lo: Vec<f64> = (0..d)
                    .map(|a| origin[a] + spacing[a] * (idx[a] as f64 - 0.5))
                    .collect();
                let hi: Vec<f64> = (0..d).map(|a| lo[a] + spacing[a]).collect();
                acc += v * if d == 3 {
                    box_newton_3d(&lo, &hi, y, &fine)
                } else {
                    box_green(&lo, &hi, y, 0, &rule, &fine)
                };
            }
            advance(&mut idx, shape);
        }
        c * acc
    }
}

fn advance(idx: &mut [usize], shape: &[usize]) {
    for a in (0..idx.len()).rev() {
        idx[a] += 1;
        if idx[a] < shape[a] {
            return;
        }
        idx[a] = 0;
    }
}

/// `Γ(d/2 − 1)/(2π^{d/2})`.
pub fn green_constant(dim: usize) -> f64 {
    let d = dim as f64;
    gamma(0.5 * d - 1.0) / (2.0 * std::f64::consts::PI.powf(0.5 * d))
}

/// `∫_a^b r^{d−1} max(r, ρ)^{2−d} dr`.
fn shell_green(a: f64, b: f64, rho: f64, dim: usize) -> f64 {
    let d = dim as f64;
    let inside = |lo: f64, hi: f64| 0.5 * (hi * hi - lo * lo);
    let outside = |lo: f64, hi: f64| rho.powf(2.0 - d) * (hi.powf(d) - lo.powf(d)) / d;
    if rho <= a {
        inside(a, b)
    } else if rho >= b {
        outside(a, b)
    } else {
        outside(a, rho) + inside(rho, b)
    }
}

/// `∫_box |z − y|^{-1} dz` in three dimensions: closed form near the box,
/// tensor Gauss–Legendre far from it (where the closed form cancels badly).
fn box_newton_3d(lo: &[f64], hi: &[f64], y: &[f64], rule: &GaussLegendre) -> f64 {
    let diag2: f64 = lo.iter().zip(hi).map(|(a, b)| (b - a) * (b - a)).sum();
    let gap2: f64 = (0..3)
        .map(|a| {
            let g = (lo[a] - y[a]).max(y[a] - hi[a]).max(0.0);
            g * g
        })
        .sum();
    if gap2 > 16.0 * diag2 {
        return tensor_integrate(lo, hi, rule, |z| 1.0 / dist2(z, y).sqrt());
    }
    let mut acc = 0.0;
    for corner in 0..8usize {
        let mut sign = 1.0;
        let mut p = [0.0; 3];
        for a in 0..3 {
            if corner >> a & 1 == 1 {
                p[a] = hi[a] - y[a];
            } else {
                p[a] = lo[a] - y[a];
                sign = -sign;
            }
        }
        acc += sign * newton_antiderivative(p[0], p[1], p[2]);
    }
    acc
}

/// An antiderivative of `(x² + y² + z²)^{-1/2}` in all three variables.
fn newton_antiderivative(x: f64, y: f64, z: f64) -> f64 {
    let r = (x * x + y * y + z * z).sqrt();
    if r == 0.0 {
        return 0.0;
    }
    // a·b·ln(c + r), zero when a·b = 0 (this also covers c + r = 0)
    let log_term = |a: f64, b: f64, c: f64| if a * b == 0.0 { 0.0 } else { a * b * (c + r).ln() };
    // a²/2 · atan(b·c/(a·r)), zero when a = 0
    let atan_term = |a: f64, b: f64, c: f64| if a == 0.0 { 0.0 } else { 0.5 * a * a * (b * c / (a * r)).atan() };
    log_term(x, y, z) + log_term(y, z, x) + log_term(z, x, y) - atan_term(x, y, z) - atan_term(y, z, x) - atan_term(z, x, y)
}

const BOX_GREEN_DEPTH: usize = 7;

/// `∫_box |z − y|^{2−d} dz`, bisecting boxes close to the singularity.
fn box_green(lo: &[f64], hi: &[f64], y: &[f64], depth: usize, rule: &GaussLegendre, fine: &GaussLegendre) -> f64 {
    let d = lo.len();
    let diag2: f64 = lo.iter().zip(hi).map(|(a, b)| (b - a) * (b - a)).sum();
    let gap2: f64 = (0..d)
        .map(|a| {
            let g = (lo[a] - y[a]).max(y[a] - hi[a]).max(0.0);
            g * g
        })
        .sum();
    if gap2 > 2.25 * diag2 || depth == BOX_GREEN_DEPTH {
        let r = if depth == BOX_GREEN_DEPTH { fine } else { rule };
        return tensor_integrate(lo, hi, r, |z| dist2(z, y).powf(1.0 - 0.5 * d as f64));
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
        total += box_green(&clo, &chi, y, depth + 1, rule, fine);
    }
    total
}

fn tensor_integrate(lo: &[f64], hi: &[f64], rule: &GaussLegendre, f: impl Fn(&[f64]) -> f64) -> f64 {
    let d = lo.len();
    let per_axis: Vec<Vec<(f64, f64)>> = (0..d).map(|a| rule.mapped(lo[a], hi[a]).collect()).collect();
    let n = rule.len();
    let mut idx = vec![0usize; d];
    let shape = vec![n; d];
    let total_pts = n.pow(d as u32);
    let mut z = vec![0.0; d];
    let mut acc = 0.0;
    for _ in 0..total_pts {
        let mut w = 1.0;
        for a in 0..d {
            let (x, wx) = per_axis[a][idx[a]];
            z[a] = x;
            w *= wx;
        }
        acc += w * f(&z);
        advance(&mut idx, &shape);
    }
    acc
}

/// Gaussian mass of a tabulated potential: each cell is a box, whose mass
/// under an isotropic Gaussian is a product of one-dimensional intervals.
fn tabulated_mass(
    dim: usize,
    origin: &[f64],
    spacing: &[f64],
    shape: &[usize],
    values: &[f64],
    mean: &[f64],
    sigma: f64,
) -> f64 {
    let axis: Vec<Vec<f64>> = (0..dim)
        .map(|a| {
            (0..shape[a])
                .map(|i| {
                    let lo = origin[a] + spacing[a] * (i as f64 - 0.5);
                    let hi = lo + spacing[a];
                    if sigma > 0.0 {
                        normal_interval((lo - mean[a]) / sigma, (hi - mean[a]) / sigma)
                    } else if mean[a] >= lo && mean[a] < hi {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let mut idx = vec![0usize; dim];
    let mut acc = 0.0;
    for v in values {
        if *v != 0.0 {
            let mut p = *v;
            for a in 0..dim {
                p *= axis[a][idx[a]];
            }
            acc += p;
        }
        advance(&mut idx, shape);
    }
    acc
}

/// Outcome of the divergence probe for one `α`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub alpha: f64,
    pub estimate: McEstimate,
    pub stable: bool,
}

/// Empirical bracket for the blow-up threshold of `E e^{αY}` (nonnegative
/// potentials only). Not a computation of the threshold itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Alpha1Diagnostic {
    pub rows: Vec<DivergenceRow>,
    /// Largest stable `α` below the first unstable one.
    pub largest_stable: Option<f64>,
    /// Smallest `α` whose estimate is dominated by a single sample.
    pub smallest_unstable: Option<f64>,
}

/// `K₁`, the MGF radius `α₀ = 1/K₁`, and an optional `α₁` bracket.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsReport {
    pub k1: f64,
    /// `None` when `K₁ = 0`: every `α` is admissible.
    pub alpha0: Option<f64>,
    pub degenerate: bool,
    /// Probe point at which the supremum was attained.
    pub argmax: Vec<f64>,
    pub probes: usize,
    pub alpha1: Option<Alpha1Diagnostic>,
}

impl BoundsReport {
    pub fn alpha0_or_inf(&self) -> f64 {
        self.alpha0.unwrap_or(f64::INFINITY)
    }
}

/// Default probe set: the center, 26 directions on the support boundary and
/// the same directions on the shell of twice the support radius.
pub fn default_probes(v: &Potential) -> Vec<Vec<f64>> {
    let d = v.dim();
    let c = v.center();
    let r = v.support_radius().max(f64::MIN_POSITIVE);
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    let m = d.min(3);
    for code in 0..3usize.pow(m as u32) {
        let mut dir = vec![0.0; d];
        let mut k = code;
        for item in dir.iter_mut().take(m) {
            *item = (k % 3) as f64 - 1.0;
            k /= 3;
        }
        let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            dirs.push(dir.iter().map(|x| x / n).collect());
        }
    }
    for a in m..d {
        for sgn in [-1.0, 1.0] {
            let mut dir = vec![0.0; d];
            dir[a] = sgn;
            dirs.push(dir);
        }
    }
    let mut probes = vec![c.to_vec()];
    for scale in [1.0, 2.0] {
        for dir in &dirs {
            probes.push(c.iter().zip(dir).map(|(ci, di)| ci + scale * r * di).collect());
        }
    }
    probes
}

/// Supremum over `probes` of `∫₀^∞∫ |v(z)| q(s; z − y) dz ds`.
pub fn k1_bound(v: &Potential, probes: &[Vec<f64>]) -> Result<BoundsReport> {
    if v.dim() < MIN_TRANSIENT_DIM {
        return domain(format!(
            "K1 is infinite in dimension {}: Brownian motion is recurrent (need d ≥ 3)",
            v.dim()
        ));
    }
    if probes.is_empty() {
        return domain("probe set is empty");
    }
    let abs = v.abs();
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (i, p) in probes.iter().enumerate() {
        if p.len() != v.dim() {
            return domain(format!("probe {i} has dimension {}", p.len()));
        }
        let g = abs.green_potential(p)?;
        if g > best.0 {
            best = (g, i);
        }
    }
    let k1 = best.0;
    let degenerate = k1 <= 0.0;
    Ok(BoundsReport {
        k1: k1.max(0.0),
        alpha0: (!degenerate).then(|| 1.0 / k1),
        degenerate,
        argmax: probes[best.1].clone(),
        probes: probes.len(),
        alpha1: None,
    })
}

/// Flags `α` values at which the empirical MGF of `Y_x` is dominated by its
/// largest sample, starting from the support center.
pub fn alpha1_divergence_probe(
    v: &Potential,
    alphas: &[f64],
    n: usize,
    horizon: f64,
    cfg: &McConfig,
) -> Result<Alpha1Diagnostic> {
    if !v.is_nonnegative() {
        return domain("divergence probe needs a nonnegative potential");
    }
    if alphas.windows(2).any(|w| w[1] <= w[0]) {
        return domain("alpha grid must be strictly increasing");
    }
    let functional = Functional::Free { x: v.center().to_vec(), horizon };
    let samples = estimate::sample_functional(&functional, v, n, cfg)?;
    let rows: Vec<DivergenceRow> = alphas
        .iter()
        .map(|&alpha| {
            let estimate = estimate::mgf_point(&samples, alpha);
            let stable = estimate::is_stable(&estimate);
            DivergenceRow { alpha, estimate, stable }
        })
        .collect();
    let smallest_unstable = rows.iter().find(|r| !r.stable).map(|r| r.alpha);
    let largest_stable = rows
        .iter()
        .filter(|r| r.stable && smallest_unstable.is_none_or(|u| r.alpha < u))
        .map(|r| r.alpha)
        .last();
    Ok(Alpha1Diagnostic { rows, largest_stable, smallest_unstable })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn radial_step() -> Potential {
        Potential::new(
            3,
            PotentialKind::RadialStep {
                center: vec![0.5, -0.2, 0.1],
                breakpoints: vec![0.5, 1.0, 1.5],
                heights: vec![2.0, -1.0, 0.5],
            },
        )
        .unwrap()
    }

    #[test]
    fn evaluation_and_bounds() {
        let v = radial_step();
        assert_eq!(v.sup_bound(), 2.0);
        assert_eq!(v.support_radius(), 1.5);
        assert_eq!(v.value(&[0.5, -0.2, 0.1]), 2.0);
        assert_eq!(v.value(&[1.2, -0.2, 0.1]), -1.0);
        assert_eq!(v.value(&[1.8, -0.2, 0.1]), 0.5);
        assert_eq!(v.value(&[2.1, -0.2, 0.1]), 0.0);
        assert!(!v.is_nonnegative());
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(Potential::new(3, PotentialKind::BallIndicator { center: vec![0.0; 2], radius: 1.0, height: 1.0 }).is_err());
        assert!(Potential::new(
            3,
            PotentialKind::RadialStep { center: vec![0.0; 3], breakpoints: vec![1.0, 0.5], heights: vec![1.0, 1.0] }
        )
        .is_err());
        assert!(Potential::new(
            2,
            PotentialKind::Tabulated { origin: vec![0.0; 2], spacing: vec![1.0; 2], shape: vec![2, 2], values: vec![1.0; 3] }
        )
        .is_err());
    }

    #[test]
    fn spot_check_sup_and_support() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let tab = Potential::new(
            3,
            PotentialKind::Tabulated {
                origin: vec![-1.0, -0.5, 0.0],
                spacing: vec![0.5, 0.5, 0.25],
                shape: vec![5, 3, 4],
                values: (0..60).map(|i| ((i * 7) % 11) as f64 - 5.0).collect(),
            },
        )
        .unwrap();
        for v in [radial_step(), Potential::unit_ball(3).unwrap(), tab] {
            let r = v.support_radius();
            for _ in 0..2000 {
                let z: Vec<f64> = v.center().iter().map(|c| c + rng.random_range(-3.0..3.0)).collect();
                let val = v.value(&z);
                assert!(val.abs() <= v.sup_bound());
                if dist2(&z, v.center()).sqrt() > r {
                    assert_eq!(val, 0.0);
                }
            }
        }
    }

    #[test]
    fn tabulated_nearest_neighbour() {
        let v = Potential::new(
            2,
            PotentialKind::Tabulated { origin: vec![0.0, 0.0], spacing: vec![1.0, 2.0], shape: vec![2, 2], values: vec![1.0, 2.0, 3.0, 4.0] },
        )
        .unwrap();
        assert_eq!(v.value(&[0.1, 0.2]), 1.0);
        assert_eq!(v.value(&[0.1, 1.9]), 2.0);
        assert_eq!(v.value(&[1.4, 0.0]), 3.0);
        assert_eq!(v.value(&[1.4, 2.9]), 4.0);
        assert_eq!(v.value(&[1.6, 0.0]), 0.0);
        assert_eq!(v.value(&[-0.6, 0.0]), 0.0);
    }

    #[test]
    fn unit_ball_green_at_center_is_one() {
        let v = Potential::unit_ball(3).unwrap();
        assert!((v.green_potential(&[0.0; 3]).unwrap() - 1.0).abs() < 1e-15);
        // outside: total mass × G(ρ) = (4π/3)/(2πρ)
        let g = v.green_potential(&[3.0, 0.0, 0.0]).unwrap();
        assert!((g - 2.0 / 9.0).abs() < 1e-15);
        // inside: 1 − ρ²/3
        let g = v.green_potential(&[0.0, 0.6, 0.0]).unwrap();
        assert!((g - (1.0 - 0.12)).abs() < 1e-15);
    }

    #[test]
    fn green_constant_matches_three_dimensions() {
        assert!((green_constant(3) - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert!(Potential::unit_ball(2).unwrap().green_potential(&[0.0; 2]).is_err());
    }

    #[test]
    fn k1_degenerate_and_linear() {
        let zero = Potential::zero(3).unwrap();
        let rep = k1_bound(&zero, &default_probes(&zero)).unwrap();
        assert!(rep.degenerate && rep.k1 == 0.0 && rep.alpha0.is_none());
        let v = radial_step();
        let a = k1_bound(&v, &default_probes(&v)).unwrap();
        let b = k1_bound(&v.scaled_height(2.0), &default_probes(&v)).unwrap();
        assert!((b.k1 / a.k1 - 2.0).abs() < 1e-14);
        assert!((a.alpha0.unwrap() * a.k1 - 1.0).abs() <= f64::EPSILON);
    }

    #[test]
    fn k1_needs_transience() {
        let v = Potential::unit_ball(2).unwrap();
        assert!(matches!(k1_bound(&v, &default_probes(&v)), Err(Error::Domain(_))));
    }

    #[test]
    fn default_probe_count() {
        assert_eq!(default_probes(&Potential::unit_ball(3).unwrap()).len(), 53);
        assert_eq!(default_probes(&Potential::unit_ball(5).unwrap()).len(), 1 + 2 * 30);
    }

    #[test]
    fn tabulated_green_matches_cube_of_ball_cells() {
        // a single cubic cell of side h seen from far away behaves like a point mass
        let h = 0.2;
        let v = Potential::new(
            3,
            PotentialKind::Tabulated { origin: vec![0.0; 3], spacing: vec![h; 3], shape: vec![1, 1, 1], values: vec![1.0] },
        )
        .unwrap();
        let far = v.green_potential(&[10.0, 0.0, 0.0]).unwrap();
        let point = h.powi(3) / (2.0 * std::f64::consts::PI * 10.0);
        assert!((far / point - 1.0).abs() < 1e-5);
        // singular cell: ∫_{cube} |z|^{-1} dz over [-h/2,h/2]³ = h² · 2.38008...
        let c = v.green_potential(&[0.0; 3]).unwrap() * 2.0 * std::f64::consts::PI;
        assert!((c / (h * h) - 2.380_077_363_979_553_5).abs() < 1e-12, "{}", c / (h * h));
    }

    #[test]
    fn box_closed_form_matches_adaptive_quadrature() {
        let rule = GaussLegendre::new(4);
        let fine = GaussLegendre::new(6);
        let lo = [-0.3, 0.1, -0.5];
        let hi = [0.4, 0.35, 0.2];
        for y in [[0.0, 0.2, 0.0], [0.4, 0.35, 0.2], [1.0, -0.5, 0.3], [0.05, 2.0, -0.1], [9.0, 7.0, 5.0]] {
            let closed = box_newton_3d(&lo, &hi, &y, &fine);
            let adaptive = box_green(&lo, &hi, &y, 0, &rule, &fine);
            assert!((closed / adaptive - 1.0).abs() < 2e-3, "{y:?}: {closed} vs {adaptive}");
        }
        // continuity across the far-field switch
        let y0 = [0.05, 0.2 + 4.0 * 0.9, 0.0];
        let a = box_newton_3d(&lo, &hi, &[y0[0], y0[1] - 1e-9, y0[2]], &fine);
        let b = box_newton_3d(&lo, &hi, &[y0[0], y0[1] + 1e-9, y0[2]], &fine);
        assert!((a / b - 1.0).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn tabulated_mass_matches_product_of_intervals() {
        let v = Potential::new(
            3,
            PotentialKind::Tabulated { origin: vec![0.0; 3], spacing: vec![1.0; 3], shape: vec![1, 1, 1], values: vec![3.0] },
        )
        .unwrap();
        let m = v.gaussian_mass(&[0.0; 3], 1.0);
        let p = normal_interval(-0.5, 0.5);
        assert!((m - 3.0 * p * p * p).abs() < 1e-15);
    }

    #[test]
    fn radial_mass_of_ball_matches_closed_form() {
        let v = Potential::ball(3, 1.5, 2.0).unwrap();
        assert!((v.gaussian_mass(&[0.0; 3], 1e-6) - 2.0).abs() < 1e-12);
        assert!(v.gaussian_mass(&[100.0, 0.0, 0.0], 1.0) == 0.0);
        let m = v.gaussian_mass(&[0.3, 0.4, 0.0], 0.8);
        assert!((m - 2.0 * ball_mass(3, 0.5, 0.8, 1.5)).abs() < 1e-15);
    }
}
