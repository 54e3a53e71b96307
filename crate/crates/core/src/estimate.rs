//! Monte Carlo estimators for moments, moment generating functions, survival
//! probabilities and the Feynman–Kac heat kernel.
//!
//! Paths are drawn in parallel, one counter-based stream per path index, and
//! collected in index order; every reduction after that is sequential. The
//! output therefore does not depend on the number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::gaussian::transition_density;
use crate::path::{
    bridge_integral, bridge_integral_adaptive, free_integral, free_integral_adaptive, free_integral_infinite, AdaptiveSteps,
    BridgeSpec, BridgeStepper, EscapeWalk, FreeStepper, GridSpec,
};
use crate::potential::{BoundsReport, Potential};
use crate::rng::path_rng;
use crate::MIN_TRANSIENT_DIM;
pub use crate::stats::McEstimate;

/// Share of `Σ|sample|` above which an estimate is flagged as dominated by a
/// single path.
pub const DOMINANCE_THRESHOLD: f64 = 0.5;

/// The random variable being sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "functional", rename_all = "snake_case", deny_unknown_fields)]
pub enum Functional {
    /// `Z(t) = ∫₀ᵗ v(X_s) ds` along the bridge from `x` to `y`.
    Bridge { x: Vec<f64>, y: Vec<f64>, t: f64 },
    /// `Y_x(T) = ∫₀ᵀ v(W_x(s)) ds`; `horizon = ∞` is sampled by the escape
    /// walk instead of a grid.
    Free { x: Vec<f64>, horizon: f64 },
    /// `Y_x(T) + Y'_y(T)` with independent motions.
    TwoSided { x: Vec<f64>, y: Vec<f64>, horizon: f64 },
}

impl Functional {
    pub fn horizon(&self) -> f64 {
        match self {
            Functional::Bridge { t, .. } => *t,
            Functional::Free { horizon, .. } | Functional::TwoSided { horizon, .. } => *horizon,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Functional::Bridge { x, .. } | Functional::Free { x, .. } | Functional::TwoSided { x, .. } => x.len(),
        }
    }

    /// Grid used when the configuration does not name one.
    pub fn default_grid(&self) -> GridSpec {
        match self {
            Functional::Bridge { .. } => GridSpec::endpoint_refined(),
            _ => GridSpec::start_refined(),
        }
    }
}

/// Sampling controls shared by all estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub seed: u64,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    /// Pair every path with the one driven by negated innovations.
    #[serde(default)]
    pub antithetic: bool,
    /// Step controls for infinite-horizon free paths.
    #[serde(default)]
    pub escape: EscapeWalk,
}

impl McConfig {
    pub fn new(seed: u64) -> Self {
        Self { seed, grid: None, antithetic: false, escape: EscapeWalk::default() }
    }

    pub fn with_grid(mut self, grid: GridSpec) -> Self {
        self.grid = Some(grid);
        self
    }
}

/// Raw path integrals in path-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub values: Vec<f64>,
    pub antithetic: bool,
}

impl SampleSet {
    /// Estimate of `E f(sample)`.
    pub fn estimate(&self, f: impl Fn(f64) -> f64) -> McEstimate {
        let mapped: Vec<f64> = self.values.iter().map(|&z| f(z)).collect();
        if self.antithetic {
            McEstimate::from_antithetic(&mapped)
        } else {
            McEstimate::from_values(&mapped)
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Draws `n` samples of `functional` (rounded up to an even count under
/// antithetic pairing).
pub fn sample_functional(functional: &Functional, v: &Potential, n: usize, cfg: &McConfig) -> Result<SampleSet> {
    if n < 2 {
        return domain(format!("need at least two samples, got {n}"));
    }
    if functional.dim() != v.dim() {
        return domain(format!(
            "potential dimension {} differs from path dimension {}",
            v.dim(),
            functional.dim()
        ));
    }
    let n = if cfg.antithetic { n.max(4).div_ceil(2) * 2 } else { n };
    let horizon = functional.horizon();
    let infinite = horizon == f64::INFINITY;
    if infinite {
        if matches!(functional, Functional::Bridge { .. }) {
            return domain("a bridge needs a finite horizon");
        }
        if v.dim() < MIN_TRANSIENT_DIM {
            return domain(format!(
                "infinite-horizon integrals diverge in dimension {} (need d ≥ 3)",
                v.dim()
            ));
        }
        cfg.escape.validate()?;
    }
    let spec = cfg.grid.clone().unwrap_or_else(|| functional.default_grid());
    if spec.is_adaptive() && !infinite {
        return sample_adaptive(functional, v, n, cfg, &AdaptiveSteps::new(&spec, v)?);
    }
    // the grid is unused for infinite horizons; any finite stand-in will do
    let grid = if infinite { GridSpec::Explicit { interior: Vec::new() }.build(1.0)? } else { spec.build(horizon)? };
    let walk = cfg.escape;
    let seed = cfg.seed;
    let anti = cfg.antithetic;
    // path i uses stream 2·base + leg; antithetic partners share a base
    let stream = move |i: usize| stream_of(anti, i);
    let values: Vec<f64> = match functional {
        Functional::Bridge { x, y, t } => {
            let spec = BridgeSpec::new(x.clone(), y.clone(), *t)?;
            let stepper = BridgeStepper::new(&grid, spec.t)?;
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let (base, sign) = stream(i);
                    let mut rng = path_rng(seed, 2 * base);
                    bridge_integral(&stepper, &spec.x, &spec.y, v, &mut rng, sign)
                })
                .collect()
        }
        Functional::Free { x, .. } => {
            let stepper = FreeStepper::new(&grid);
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let (base, sign) = stream(i);
                    let mut rng = path_rng(seed, 2 * base);
                    if infinite {
                        free_integral_infinite(&walk, x, v, &mut rng, sign)
                    } else {
                        free_integral(&stepper, x, v, &mut rng, sign)
                    }
                })
                .collect()
        }
        Functional::TwoSided { x, y, .. } => {
            if y.len() != x.len() {
                return domain("two-sided start points differ in dimension");
            }
            let stepper = FreeStepper::new(&grid);
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let (base, sign) = stream(i);
                    let mut rx = path_rng(seed, 2 * base);
                    let mut ry = path_rng(seed, 2 * base + 1);
                    if infinite {
                        free_integral_infinite(&walk, x, v, &mut rx, sign)
                            + free_integral_infinite(&walk, y, v, &mut ry, sign)
                    } else {
                        free_integral(&stepper, x, v, &mut rx, sign) + free_integral(&stepper, y, v, &mut ry, sign)
                    }
                })
                .collect()
        }
    };
    Ok(SampleSet { values, antithetic: anti })
}

/// Path index `i` → (stream base, innovation sign).
fn stream_of(antithetic: bool, i: usize) -> (u64, f64) {
    if antithetic {
        ((i / 2) as u64, if i.is_multiple_of(2) { 1.0 } else { -1.0 })
    } else {
        (i as u64, 1.0)
    }
}

fn sample_adaptive(functional: &Functional, v: &Potential, n: usize, cfg: &McConfig, rule: &AdaptiveSteps) -> Result<SampleSet> {
    let (seed, anti) = (cfg.seed, cfg.antithetic);
    let values: Vec<f64> = match functional {
        Functional::Bridge { x, y, t } => {
            let spec = BridgeSpec::new(x.clone(), y.clone(), *t)?;
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let (base, sign) = stream_of(anti, i);
                    let mut rng = path_rng(seed, 2 * base);
                    bridge_integral_adaptive(rule, &spec.x, &spec.y, spec.t, v, &mut rng, sign)
                })
                .collect()
        }
        Functional::Free { x, horizon } => (0..n)
            .into_par_iter()
            .map(|i| {
                let (base, sign) = stream_of(anti, i);
                let mut rng = path_rng(seed, 2 * base);
                free_integral_adaptive(rule, x, *horizon, v, &mut rng, sign)
            })
            .collect(),
        Functional::TwoSided { x, y, horizon } => {
            if y.len() != x.len() {
                return domain("two-sided start points differ in dimension");
            }
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let (base, sign) = stream_of(anti, i);
                    let mut rx = path_rng(seed, 2 * base);
                    let mut ry = path_rng(seed, 2 * base + 1);
                    free_integral_adaptive(rule, x, *horizon, v, &mut rx, sign)
                        + free_integral_adaptive(rule, y, *horizon, v, &mut ry, sign)
                })
                .collect()
        }
    };
    Ok(SampleSet { values, antithetic: anti })
}

/// Empirical `E[Z^k]`.
pub fn mc_moment(functional: &Functional, v: &Potential, k: u32, n: usize, cfg: &McConfig) -> Result<McEstimate> {
    if k == 0 {
        return domain("moment order must be at least 1");
    }
    let samples = sample_functional(functional, v, n, cfg)?;
    Ok(moment_of(&samples, k))
}

pub fn moment_of(samples: &SampleSet, k: u32) -> McEstimate {
    samples.estimate(|z| z.powi(k as i32))
}

/// `E e^{αZ}` from one sample set, computed with the largest exponent
/// factored out so that the dominance share survives overflow of the mean.
pub fn mgf_point(samples: &SampleSet, alpha: f64) -> McEstimate {
    if alpha == 0.0 {
        return samples.estimate(|_| 1.0);
    }
    let shift = samples.values.iter().map(|z| alpha * z).fold(f64::NEG_INFINITY, f64::max);
    let scaled = samples.estimate(|z| (alpha * z - shift).exp());
    let factor = shift.exp();
    McEstimate {
        mean: scaled.mean * factor,
        std_error: scaled.std_error * factor,
        ..scaled
    }
}

pub fn is_stable(e: &McEstimate) -> bool {
    e.mean.is_finite() && e.max_sample_share <= DOMINANCE_THRESHOLD
}

/// Empirical moment generating function over a grid of `α`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MgfCurve {
    pub alphas: Vec<f64>,
    pub estimates: Vec<McEstimate>,
    pub stable: Vec<bool>,
    pub warnings: Vec<String>,
}

impl MgfCurve {
    pub fn from_samples(samples: &SampleSet, alphas: &[f64]) -> Self {
        let estimates: Vec<McEstimate> = alphas.iter().map(|&a| mgf_point(samples, a)).collect();
        let stable = estimates.iter().map(is_stable).collect();
        Self { alphas: alphas.to_vec(), estimates, stable, warnings: Vec::new() }
    }

    pub fn any_unstable(&self) -> bool {
        self.stable.iter().any(|s| !s)
    }
}

/// Warnings for `α` values outside the range where finiteness is known.
pub fn admissibility_warnings(v: &Potential, alphas: &[f64], bounds: Option<&BoundsReport>) -> Vec<String> {
    let Some(b) = bounds else { return Vec::new() };
    let a0 = b.alpha0_or_inf();
    let a1 = b.alpha1.as_ref().and_then(|d| d.smallest_unstable);
    let nonneg = v.is_nonnegative();
    let mut out = Vec::new();
    for &a in alphas {
        if !nonneg && a.abs() >= a0 {
            out.push(format!("alpha = {a} is outside (-alpha0, alpha0) = (-{a0}, {a0}) for a sign-changing potential"));
        }
        if nonneg {
            if let Some(u) = a1 {
                if a >= u {
                    out.push(format!("alpha = {a} is at or beyond the first unstable probe value {u}"));
                }
            }
        }
    }
    out
}

pub fn mc_mgf(
    functional: &Functional,
    v: &Potential,
    alphas: &[f64],
    n: usize,
    cfg: &McConfig,
    bounds: Option<&BoundsReport>,
) -> Result<MgfCurve> {
    if alphas.iter().any(|a| !a.is_finite()) {
        return domain("alpha grid must be finite");
    }
    let samples = sample_functional(functional, v, n, cfg)?;
    let mut curve = MgfCurve::from_samples(&samples, alphas);
    curve.warnings = admissibility_warnings(v, alphas, bounds);
    for w in &curve.warnings {
        log::warn!("{w}");
    }
    Ok(curve)
}

/// Survival probability `E e^{−Z}` and its complement.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub survival: McEstimate,
    pub reaction: McEstimate,
}

pub fn reaction_probability(functional: &Functional, v: &Potential, n: usize, cfg: &McConfig) -> Result<SurvivalEstimate> {
    if !v.is_nonnegative() {
        return domain("reaction rates must be nonnegative");
    }
    let samples = sample_functional(functional, v, n, cfg)?;
    let survival = samples.estimate(|z| (-z).exp());
    let reaction = samples.estimate(|z| -(-z).exp_m1());
    Ok(SurvivalEstimate { survival, reaction })
}

/// Heat kernel of `∂f/∂t = ½Δf − v f`: `q(t; y − x) · E e^{−Z(t)}` with `Z`
/// along the bridge from `x` to `y`.
pub fn bloch_green(x: &[f64], y: &[f64], t: f64, v: &Potential, n: usize, cfg: &McConfig) -> Result<McEstimate> {
    let yx: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    let q = transition_density(t, &yx)?;
    let functional = Functional::Bridge { x: x.to_vec(), y: y.to_vec(), t };
    let samples = sample_functional(&functional, v, n, cfg)?;
    Ok(samples.estimate(|z| (-z).exp()).scaled(q))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Potential {
        Potential::unit_ball(3).unwrap()
    }

    #[test]
    fn zero_potential_gives_exact_values() {
        let zero = Potential::zero(3).unwrap();
        let f = Functional::Bridge { x: vec![0.0; 3], y: vec![1.0, 0.0, 0.0], t: 2.0 };
        let cfg = McConfig::new(1);
        let m = mc_moment(&f, &zero, 1, 50, &cfg).unwrap();
        assert_eq!((m.mean, m.std_error), (0.0, 0.0));
        let c = mc_mgf(&f, &zero, &[-1.0, 0.0, 2.0], 50, &cfg, None).unwrap();
        assert!(c.estimates.iter().all(|e| e.mean == 1.0 && e.std_error == 0.0));
        let s = reaction_probability(&f, &zero, 50, &cfg).unwrap();
        assert_eq!(s.survival.mean, 1.0);
        assert_eq!(s.reaction.mean, 0.0);
        let g = bloch_green(&[0.0; 3], &[1.0, 0.0, 0.0], 2.0, &zero, 50, &cfg).unwrap();
        assert_eq!(g.mean, transition_density(2.0, &[1.0, 0.0, 0.0]).unwrap());
    }

    #[test]
    fn mgf_at_zero_is_exactly_one() {
        let f = Functional::Free { x: vec![0.0; 3], horizon: 5.0 };
        let c = mc_mgf(&f, &unit(), &[0.0], 200, &McConfig::new(2), None).unwrap();
        assert_eq!(c.estimates[0].mean, 1.0);
        assert_eq!(c.estimates[0].std_error, 0.0);
        assert!(c.stable[0]);
    }

    #[test]
    fn negative_alpha_mgf_in_unit_interval() {
        let f = Functional::Bridge { x: vec![0.0; 3], y: vec![0.0; 3], t: 3.0 };
        let s = sample_functional(&f, &unit(), 500, &McConfig::new(3)).unwrap();
        for a in [-0.1, -1.0, -10.0] {
            let e = mgf_point(&s, a);
            assert!(e.mean > 0.0 && e.mean <= 1.0);
        }
    }

    #[test]
    fn survival_is_a_probability_pathwise() {
        let v = Potential::ball(3, 1.0, 5.0).unwrap();
        let f = Functional::Bridge { x: vec![0.0; 3], y: vec![0.0; 3], t: 1.0 };
        let s = sample_functional(&f, &v, 300, &McConfig::new(4)).unwrap();
        assert!(s.values.iter().all(|z| (-z).exp() <= 1.0 && (-z).exp() >= 0.0));
        let r = reaction_probability(&f, &v, 300, &McConfig::new(4)).unwrap();
        assert!((r.survival.mean + r.reaction.mean - 1.0).abs() < 1e-12);
        assert!(reaction_probability(&f, &v.scaled_height(-1.0), 10, &McConfig::new(4)).is_err());
    }

    #[test]
    fn pinned_path_survival_matches_exponential() {
        // huge rate, short horizon, path confined well inside the support
        let k = 40.0;
        let v = Potential::ball(3, 10.0, k).unwrap();
        let f = Functional::Bridge { x: vec![0.0; 3], y: vec![0.0; 3], t: 0.05 };
        let cfg = McConfig::new(5).with_grid(GridSpec::Uniform { h: 0.001 });
        let r = reaction_probability(&f, &v, 100, &cfg).unwrap();
        assert!((r.survival.mean - (-k * 0.05f64).exp()).abs() < 1e-12);
        let r = reaction_probability(&f, &v.scaled_height(100.0), 100, &cfg).unwrap();
        assert!(r.survival.mean < 1e-80);
    }

    #[test]
    fn antithetic_pairs_negate_innovations() {
        let f = Functional::Free { x: vec![0.0; 3], horizon: 1.0 };
        let cfg = McConfig { grid: Some(GridSpec::Uniform { h: 0.5 }), antithetic: true, ..McConfig::new(9) };
        let big = Potential::new(
            3,
            crate::potential::PotentialKind::RadialStep {
                center: vec![0.0; 3],
                breakpoints: vec![0.5, 1.0, 100.0],
                heights: vec![3.0, 2.0, 1.0],
            },
        )
        .unwrap();
        let s = sample_functional(&f, &big, 7, &cfg).unwrap();
        assert_eq!(s.len(), 8);
        // with two steps, Y = 0.5 v(0) + 0.5 v(W_0.5): the partner sees −W_0.5, same radius
        for p in s.values.chunks_exact(2) {
            assert_eq!(p[0], p[1]);
        }
    }

    #[test]
    fn rejects_tiny_budgets_and_dimension_mismatch() {
        let f = Functional::Free { x: vec![0.0; 3], horizon: 1.0 };
        assert!(sample_functional(&f, &unit(), 1, &McConfig::new(0)).is_err());
        let v4 = Potential::unit_ball(4).unwrap();
        assert!(sample_functional(&f, &v4, 10, &McConfig::new(0)).is_err());
    }

    #[test]
    fn mgf_overflow_is_flagged_not_fatal() {
        let s = SampleSet { values: vec![0.0, 1.0, 2.0, 30.0], antithetic: false };
        let e = mgf_point(&s, 40.0);
        assert!(e.max_sample_share > 0.99);
        assert!(!is_stable(&e));
    }
}
