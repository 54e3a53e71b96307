//! Time grids and exact-in-law sampling of Brownian paths on them.
//!
//! Bridge positions are drawn one node at a time from the conditional law
//! given the previous node and the pinned endpoint, which is exact on any
//! grid and lands on `y` at the final node. Path integrals use the left-node
//! rule `Σ_j v(z_j) Δ_j s`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::potential::Potential;
use crate::MIN_TRANSIENT_DIM;

/// Default fine step near the endpoints.
pub const DEFAULT_H_FINE: f64 = 0.01;

/// How to lay out grid nodes on `[0, t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    /// Equal steps no longer than `h`.
    Uniform { h: f64 },
    /// Steps `≤ h_fine` within `u` of either endpoint, `≤ h_coarse` in between.
    /// Unset values default to `u = √t`, `h_fine = 0.01`, `h_coarse = min(1, t/100)`.
    EndpointRefined {
        #[serde(default)]
        u: Option<f64>,
        #[serde(default)]
        h_fine: Option<f64>,
        #[serde(default)]
        h_coarse: Option<f64>,
    },
    /// Fine steps on `[0, u]` only; used for free motion, whose far end is
    /// not pinned.
    StartRefined {
        #[serde(default)]
        u: Option<f64>,
        #[serde(default)]
        h_fine: Option<f64>,
        #[serde(default)]
        h_coarse: Option<f64>,
    },
    /// Explicit interior nodes in `(0, t)`.
    Explicit { interior: Vec<f64> },
    /// Path-dependent steps `max(h_near·R², (gap/safety)²)`, capped by
    /// `h_max`, where `gap` is the current distance to the support of
    /// radius `R`. Each step is an exact conditional Gaussian move, so the
    /// only error is the left-node rule near the support. Defaults:
    /// `h_near = 1e-3`, `safety = 5`, no cap.
    SupportAdaptive {
        #[serde(default)]
        h_near: Option<f64>,
        #[serde(default)]
        safety: Option<f64>,
        #[serde(default)]
        h_max: Option<f64>,
    },
}

impl GridSpec {
    pub fn endpoint_refined() -> Self {
        GridSpec::EndpointRefined { u: None, h_fine: None, h_coarse: None }
    }

    pub fn start_refined() -> Self {
        GridSpec::StartRefined { u: None, h_fine: None, h_coarse: None }
    }

    pub fn support_adaptive() -> Self {
        GridSpec::SupportAdaptive { h_near: None, safety: None, h_max: None }
    }

    /// Whether nodes are drawn per path rather than fixed in advance.
    pub fn is_adaptive(&self) -> bool {
        matches!(self, GridSpec::SupportAdaptive { .. })
    }

    /// Fixed grid on `[0, t]`; adaptive policies have none.
    pub fn build(&self, t: f64) -> Result<TimeGrid> {
        if !(t > 0.0 && t.is_finite()) {
            return domain(format!("grid horizon must be positive and finite, got {t}"));
        }
        let resolve = |u: &Option<f64>, hf: &Option<f64>, hc: &Option<f64>| -> Result<(f64, f64, f64)> {
            let u = u.unwrap_or(t.sqrt());
            let hf = hf.unwrap_or(DEFAULT_H_FINE);
            let hc = hc.unwrap_or((t / 100.0).min(1.0)).max(hf);
            if !(u > 0.0 && hf > 0.0) {
                return domain(format!("grid parameters must be positive (u={u}, h_fine={hf})"));
            }
            Ok((u, hf, hc))
        };
        let mut nodes = vec![0.0];
        match self {
            GridSpec::Uniform { h } => {
                if !(*h > 0.0) {
                    return domain(format!("grid step must be positive, got {h}"));
                }
                push_segment(&mut nodes, t, *h);
            }
            GridSpec::EndpointRefined { u, h_fine, h_coarse } => {
                let (u, hf, hc) = resolve(u, h_fine, h_coarse)?;
                if 2.0 * u >= t {
                    push_segment(&mut nodes, t, hf);
                } else {
                    push_segment(&mut nodes, u, hf);
                    push_segment(&mut nodes, t - u, hc);
                    push_segment(&mut nodes, t, hf);
                }
            }
            GridSpec::StartRefined { u, h_fine, h_coarse } => {
                let (u, hf, hc) = resolve(u, h_fine, h_coarse)?;
                if u >= t {
                    push_segment(&mut nodes, t, hf);
                } else {
                    push_segment(&mut nodes, u, hf);
                    push_segment(&mut nodes, t, hc);
                }
            }
            GridSpec::Explicit { interior } => {
                nodes.extend_from_slice(interior);
                nodes.push(t);
            }
            GridSpec::SupportAdaptive { .. } => {
                return domain("support_adaptive grids are drawn path by path and have no fixed nodes");
            }
        }
        TimeGrid::new(nodes, self.clone())
    }
}

fn push_segment(nodes: &mut Vec<f64>, end: f64, h: f64) {
    let start = *nodes.last().expect("grid starts at 0");
    let len = end - start;
    let n = ((len / h) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    for i in 1..n {
        nodes.push(start + len * i as f64 / n as f64);
    }
    nodes.push(end);
}

/// Strictly increasing nodes from 0 to the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    policy: GridSpec,
}

impl TimeGrid {
    pub fn new(nodes: Vec<f64>, policy: GridSpec) -> Result<Self> {
        if nodes.len() < 2 || nodes[0] != 0.0 {
            return domain("grid must start at 0 and have at least two nodes");
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return domain("grid nodes must be strictly increasing");
        }
        Ok(Self { nodes, policy })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn policy(&self) -> &GridSpec {
        &self.policy
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().expect("nonempty grid")
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Nodes multiplied by `c` (time rescaling).
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return domain("time scale must be positive");
        }
        let nodes = self.nodes.iter().map(|s| s * c).collect();
        let interior = self.nodes[1..self.nodes.len() - 1].iter().map(|s| s * c).collect();
        Self::new(nodes, GridSpec::Explicit { interior })
    }
}

/// Endpoints, horizon and dimension of a bridge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeSpec {
    pub dim: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl BridgeSpec {
    pub fn new(x: Vec<f64>, y: Vec<f64>, t: f64) -> Result<Self> {
        let dim = x.len();
        if dim < MIN_TRANSIENT_DIM {
            return Err(Error::Config(format!(
                "bridge dimension {dim} is below 3; the limit theorems assume d ≥ 3"
            )));
        }
        if y.len() != dim {
            return domain("bridge endpoints differ in dimension");
        }
        if !(t > 0.0 && t.is_finite()) {
            return domain(format!("bridge horizon must be positive and finite, got {t}"));
        }
        if x.iter().chain(&y).any(|c| !c.is_finite()) {
            return domain("bridge endpoints must be finite");
        }
        Ok(Self { dim, t, x, y })
    }
}

/// Law of a sampled path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum PathLaw {
    Free { x: Vec<f64> },
    Bridge { x: Vec<f64>, y: Vec<f64>, t: f64 },
}

/// A realised path: one position per grid node, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub grid: TimeGrid,
    pub dim: usize,
    pub positions: Vec<f64>,
    pub law: PathLaw,
}

impl PathSample {
    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.grid.nodes().len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Precomputed one-step coefficients of the bridge on a grid: the next node
/// has mean `z + pull·(y − z)` and standard deviation `sd`.
#[derive(Debug, Clone)]
pub struct BridgeStepper {
    dt: Vec<f64>,
    pull: Vec<f64>,
    sd: Vec<f64>,
}

impl BridgeStepper {
    pub fn new(grid: &TimeGrid, t: f64) -> Result<Self> {
        if (grid.horizon() - t).abs() > 1e-12 * t.max(1.0) {
            return domain(format!("grid ends at {} but the bridge horizon is {t}", grid.horizon()));
        }
        let s = grid.nodes();
        let n = grid.steps();
        let mut dt = Vec::with_capacity(n);
        let mut pull = Vec::with_capacity(n);
        let mut sd = Vec::with_capacity(n);
        for j in 0..n {
            let h = s[j + 1] - s[j];
            let left = t - s[j];
            dt.push(h);
            if j + 1 == n {
                pull.push(1.0);
                sd.push(0.0);
            } else {
                pull.push(h / left);
                sd.push((h * (t - s[j + 1]) / left).sqrt());
            }
        }
        Ok(Self { dt, pull, sd })
    }

    /// Runs one path, calling `visit(j, z_j)` at every node before the last
    /// and returning the final position (which equals `y`).
    #[inline]
    fn run<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        y: &[f64],
        rng: &mut R,
        sign: f64,
        mut visit: impl FnMut(usize, &[f64]),
    ) -> Vec<f64> {
        let mut z = x.to_vec();
        let n = self.dt.len();
        for j in 0..n {
            visit(j, &z);
            if j + 1 == n {
                z.copy_from_slice(y);
            } else {
                let (p, sd) = (self.pull[j], self.sd[j]);
                for (zi, yi) in z.iter_mut().zip(y) {
                    let e: f64 = rng.sample(StandardNormal);
                    *zi += p * (yi - *zi) + sd * sign * e;
                }
            }
        }
        z
    }
}

/// Precomputed step deviations `√Δ_j s` of free motion on a grid.
#[derive(Debug, Clone)]
pub struct FreeStepper {
    dt: Vec<f64>,
    sd: Vec<f64>,
}

impl FreeStepper {
    pub fn new(grid: &TimeGrid) -> Self {
        let dt: Vec<f64> = grid.nodes().windows(2).map(|w| w[1] - w[0]).collect();
        let sd = dt.iter().map(|h| h.sqrt()).collect();
        Self { dt, sd }
    }

    #[inline]
    fn run<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R, sign: f64, mut visit: impl FnMut(usize, &[f64])) -> Vec<f64> {
        let mut z = x.to_vec();
        for (j, sd) in self.sd.iter().enumerate() {
            visit(j, &z);
            for zi in z.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *zi += sd * sign * e;
            }
        }
        z
    }
}

pub fn sample_bridge<R: Rng + ?Sized>(spec: &BridgeSpec, grid: &TimeGrid, rng: &mut R) -> Result<PathSample> {
    let stepper = BridgeStepper::new(grid, spec.t)?;
    let mut positions = Vec::with_capacity(grid.nodes().len() * spec.dim);
    let last = stepper.run(&spec.x, &spec.y, rng, 1.0, |_, z| positions.extend_from_slice(z));
    positions.extend_from_slice(&last);
    Ok(PathSample {
        grid: grid.clone(),
        dim: spec.dim,
        positions,
        law: PathLaw::Bridge { x: spec.x.clone(), y: spec.y.clone(), t: spec.t },
    })
}

pub fn sample_free<R: Rng + ?Sized>(x: &[f64], grid: &TimeGrid, rng: &mut R) -> Result<PathSample> {
    if x.is_empty() {
        return domain("start point has no coordinates");
    }
    let stepper = FreeStepper::new(grid);
    let mut positions = Vec::with_capacity(grid.nodes().len() * x.len());
    let last = stepper.run(x, rng, 1.0, |_, z| positions.extend_from_slice(z));
    positions.extend_from_slice(&last);
    Ok(PathSample { grid: grid.clone(), dim: x.len(), positions, law: PathLaw::Free { x: x.to_vec() } })
}

/// Left-node quadrature `Σ_j v(z_j) Δ_j s` of `∫ v(X_s) ds`.
pub fn integrate_along_path(v: &Potential, path: &PathSample) -> Result<f64> {
    if v.dim() != path.dim {
        return domain(format!("potential dimension {} differs from path dimension {}", v.dim(), path.dim));
    }
    let s = path.grid.nodes();
    Ok((0..s.len() - 1).map(|j| v.value(path.position(j)) * (s[j + 1] - s[j])).sum())
}

/// Bridge path integral `Z(t)` without storing the path. Consumes the same
/// draws as [`sample_bridge`], so both agree bit for bit.
#[inline]
pub fn bridge_integral<R: Rng + ?Sized>(
    stepper: &BridgeStepper,
    x: &[f64],
    y: &[f64],
    v: &Potential,
    rng: &mut R,
    sign: f64,
) -> f64 {
    let mut acc = 0.0;
    stepper.run(x, y, rng, sign, |j, z| {
        let val = v.value(z);
        if val != 0.0 {
            acc += val * stepper.dt[j];
        }
    });
    acc
}

/// Free path integral `Y_x(T)` without storing the path.
#[inline]
pub fn free_integral<R: Rng + ?Sized>(stepper: &FreeStepper, x: &[f64], v: &Potential, rng: &mut R, sign: f64) -> f64 {
    let mut acc = 0.0;
    stepper.run(x, rng, sign, |j, z| {
        let val = v.value(z);
        if val != 0.0 {
            acc += val * stepper.dt[j];
        }
    });
    acc
}

/// Step rule of [`GridSpec::SupportAdaptive`] resolved against a potential.
#[derive(Debug, Clone)]
pub struct AdaptiveSteps {
    h_near: f64,
    safety: f64,
    h_max: f64,
    radius: f64,
    center: Vec<f64>,
}

impl AdaptiveSteps {
    pub fn new(spec: &GridSpec, v: &Potential) -> Result<Self> {
        let GridSpec::SupportAdaptive { h_near, safety, h_max } = spec else {
            return domain("not a support_adaptive policy");
        };
        let radius = v.support_radius();
        let h_near = h_near.unwrap_or(1e-3);
        let safety = safety.unwrap_or(5.0);
        let h_max = h_max.unwrap_or(f64::INFINITY);
        if !(h_near > 0.0 && h_near.is_finite() && safety > 0.0 && h_max > 0.0) {
            return Err(Error::Config(format!(
                "support_adaptive needs h_near > 0, safety > 0 and h_max > 0 (got {h_near}, {safety}, {h_max})"
            )));
        }
        // a point support carries no mass; any positive step will do
        let scale = if radius > 0.0 { radius * radius } else { 1.0 };
        Ok(Self { h_near: h_near * scale, safety, h_max, radius, center: v.center().to_vec() })
    }

    /// Distance from `z` to the support ball (0 inside).
    #[inline]
    fn gap(&self, z: &[f64]) -> f64 {
        (crate::dist2(z, &self.center).sqrt() - self.radius).max(0.0)
    }

    #[inline]
    fn step(&self, gap: f64) -> f64 {
        self.h_near.max((gap / self.safety).powi(2)).min(self.h_max)
    }
}

/// `Z(t)` on a support-adaptive grid. Far from the support the drift
/// towards `y` is also limited to `gap/safety` per step.
pub fn bridge_integral_adaptive<R: Rng + ?Sized>(
    rule: &AdaptiveSteps,
    x: &[f64],
    y: &[f64],
    t: f64,
    v: &Potential,
    rng: &mut R,
    sign: f64,
) -> f64 {
    if v.is_zero() {
        return 0.0;
    }
    let mut z = x.to_vec();
    let mut s = 0.0;
    let mut acc = 0.0;
    loop {
        let left = t - s;
        let gap = rule.gap(&z);
        let mut h = rule.step(gap);
        if gap > 0.0 {
            let dy = crate::dist2(&z, y).sqrt();
            if dy > 0.0 {
                h = h.min(rule.h_near.max(gap * left / (rule.safety * dy)));
            }
        }
        let val = v.value(&z);
        if h >= left {
            return acc + val * left;
        }
        acc += val * h;
        let pull = h / left;
        let sd = (h * (left - h) / left).sqrt() * sign;
        for (zi, yi) in z.iter_mut().zip(y) {
            let e: f64 = rng.sample(StandardNormal);
            *zi += pull * (yi - *zi) + sd * e;
        }
        s += h;
    }
}

/// `Y_x(T)` on a support-adaptive grid, `T` finite.
pub fn free_integral_adaptive<R: Rng + ?Sized>(
    rule: &AdaptiveSteps,
    x: &[f64],
    horizon: f64,
    v: &Potential,
    rng: &mut R,
    sign: f64,
) -> f64 {
    if v.is_zero() {
        return 0.0;
    }
    let mut z = x.to_vec();
    let mut s = 0.0;
    let mut acc = 0.0;
    loop {
        let left = horizon - s;
        let h = rule.step(rule.gap(&z));
        let val = v.value(&z);
        if h >= left {
            return acc + val * left;
        }
        acc += val * h;
        let sd = h.sqrt() * sign;
        for zi in z.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *zi += sd * e;
        }
        s += h;
    }
}

/// Controls for sampling `Y_x(∞)` exactly in law (up to the left-node rule
/// near the support), with no truncation horizon.
///
/// Let `R` be the support radius. Inside the ball of radius `outer·R` the
/// walk takes Gaussian steps of length `max(h_near·R², (gap/safety)²)`,
/// where `gap` is the distance to the support. Once it leaves that ball at
/// distance `ρ`, it comes back to the sphere of radius `restart·R` with
/// probability `(restart·R/ρ)^{d−2}`. If it does, it restarts from a point
/// drawn from the harmonic measure seen from outside; otherwise the
/// integral is complete. Time spent away from the support adds nothing to
/// `Y`, so skipping it is exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EscapeWalk {
    pub h_near: f64,
    pub safety: f64,
    pub outer: f64,
    pub restart: f64,
}

impl Default for EscapeWalk {
    fn default() -> Self {
        Self { h_near: 1e-3, safety: 5.0, outer: 4.0, restart: 2.0 }
    }
}

impl EscapeWalk {
    pub fn validate(&self) -> Result<()> {
        let ok = self.h_near > 0.0
            && self.h_near.is_finite()
            && self.safety > 0.0
            && self.restart >= 1.0
            && self.outer > self.restart
            && self.outer.is_finite();
        if !ok {
            return Err(Error::Config(format!(
                "escape walk needs h_near > 0, safety > 0 and 1 ≤ restart < outer (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// `Y_x(∞)` for one path of the escape walk. Requires `d ≥ 3`.
pub fn free_integral_infinite<R: Rng + ?Sized>(walk: &EscapeWalk, x: &[f64], v: &Potential, rng: &mut R, sign: f64) -> f64 {
    let radius = v.support_radius();
    if v.is_zero() || radius == 0.0 {
        return 0.0;
    }
    let d = x.len();
    let c = v.center();
    let h_near = walk.h_near * radius * radius;
    let outer = walk.outer * radius;
    let restart = walk.restart * radius;
    let mut z = x.to_vec();
    let mut acc = 0.0;
    loop {
        let rho = crate::dist2(&z, c).sqrt();
        if rho >= outer {
            let back = (restart / rho).powi(d as i32 - 2);
            let u: f64 = rng.random();
            if u >= back {
                return acc;
            }
            z = harmonic_point(&z, c, restart, rng);
            continue;
        }
        let gap = rho - radius;
        let h = if gap > 0.0 { h_near.max((gap / walk.safety).powi(2)) } else { h_near };
        let val = v.value(&z);
        if val != 0.0 {
            acc += val * h;
        }
        let sd = h.sqrt() * sign;
        for zi in z.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *zi += sd * e;
        }
    }
}

/// First hitting point of the sphere `|z − c| = a` by Brownian motion from
/// `from` (outside it), conditioned on hitting: density `∝ |from − ξ|^{−d}`,
/// drawn by rejection from the uniform law on the sphere.
fn harmonic_point<R: Rng + ?Sized>(from: &[f64], c: &[f64], a: f64, rng: &mut R) -> Vec<f64> {
    let d = from.len();
    let rho = crate::dist2(from, c).sqrt();
    let nearest = rho - a;
    let mut xi = vec![0.0; d];
    loop {
        let mut n2: f64 = 0.0;
        for e in xi.iter_mut() {
            *e = rng.sample(StandardNormal);
            n2 += *e * *e;
        }
        if n2 == 0.0 {
            continue;
        }
        let scale = a / n2.sqrt();
        for (e, ci) in xi.iter_mut().zip(c) {
            *e = ci + *e * scale;
        }
        let dist = crate::dist2(from, &xi).sqrt();
        let accept = (nearest / dist).powi(d as i32);
        let u: f64 = rng.random();
        if u < accept {
            return xi;
        }
    }
}

/// `Z(t)` for one seeded path.
pub fn sample_z<R: Rng + ?Sized>(spec: &BridgeSpec, grid: &TimeGrid, v: &Potential, rng: &mut R) -> Result<f64> {
    check_dim(v, spec.dim)?;
    let stepper = BridgeStepper::new(grid, spec.t)?;
    Ok(bridge_integral(&stepper, &spec.x, &spec.y, v, rng, 1.0))
}

/// `Y_x(T)` with `T` the end of `grid`.
pub fn sample_y<R: Rng + ?Sized>(x: &[f64], grid: &TimeGrid, v: &Potential, rng: &mut R) -> Result<f64> {
    check_dim(v, x.len())?;
    Ok(free_integral(&FreeStepper::new(grid), x, v, rng, 1.0))
}

/// `Y_x(T) + Y'_y(T)` from two independent streams.
pub fn sample_two_sided<R: Rng + ?Sized>(
    x: &[f64],
    y: &[f64],
    grid: &TimeGrid,
    v: &Potential,
    rng_x: &mut R,
    rng_y: &mut R,
) -> Result<f64> {
    check_dim(v, x.len())?;
    check_dim(v, y.len())?;
    let stepper = FreeStepper::new(grid);
    Ok(free_integral(&stepper, x, v, rng_x, 1.0) + free_integral(&stepper, y, v, rng_y, 1.0))
}

fn check_dim(v: &Potential, d: usize) -> Result<()> {
    if v.dim() != d {
        return domain(format!("potential dimension {} differs from path dimension {d}", v.dim()));
    }
    Ok(())
}
