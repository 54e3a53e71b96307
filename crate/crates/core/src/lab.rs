//! Parameter sweeps for the bridge limit theorems.
//!
//! A [`SweepPlan`] fixes the potential, the start point, the way the end
//! point moves with the horizon and a grid of horizons. Each runner produces
//! a [`ConvergenceReport`]: one row per (statistic, order or `α`, horizon)
//! with the bridge statistic, its limit target, the gap between them and,
//! on the last horizon, a verdict.
//!
//! Every Monte Carlo job of a plan draws from a seed derived from the master
//! seed, a hash of the plan and the job's index, so reports do not depend on
//! scheduling or on the number of worker threads.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::estimate::{mgf_point, moment_of, sample_functional, Functional, McConfig, McEstimate, SampleSet};
use crate::gaussian::{density_ratio_q, SpacePoints, TimePoints};
use crate::path::{BridgeSpec, EscapeWalk, GridSpec};
use crate::potential::{default_probes, k1_bound, BoundsReport, Potential, PotentialKind};
use crate::quadrature::{self, with_error, QuadConfig};
use crate::rng::derive_seed;
use crate::stats::combined_se;
use crate::MIN_TRANSIENT_DIM;

/// Which statement a sweep exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Theorem {
    /// Fixed endpoints: bridge → two-sided free limit.
    T1,
    /// `|y(t)| → ∞` with `|y(t)|²/t → 0`: bridge → one-sided limit.
    T2a,
    /// `|y(t)|²/t` bounded away from 0 and ∞: bridge → one-sided limit.
    T2b,
    /// Convergent start points and growing horizons: free moments converge.
    L4a,
    /// Escaping start points: the free MGF tends to 1.
    L4b,
}

impl Theorem {
    pub fn label(&self) -> &'static str {
        match self {
            Theorem::T1 => "theorem1",
            Theorem::T2a => "theorem2a",
            Theorem::T2b => "theorem2b",
            Theorem::L4a => "lemma4a",
            Theorem::L4b => "lemma4b",
        }
    }
}

/// How the bridge end point depends on the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum EndpointRule {
    /// `y(t) = y`.
    Fixed { y: Vec<f64> },
    /// `y(t) = c·√t·e₁`, so `|y|²/t = c²`.
    SqrtScaled { c: f64 },
    /// `y(t) = c·t^{1/4}·e₁`, so `|y|²/t = c²/√t → 0`.
    QuarterPower { c: f64 },
}

impl EndpointRule {
    pub fn at(&self, t: f64, dim: usize) -> Vec<f64> {
        match self {
            EndpointRule::Fixed { y } => y.clone(),
            EndpointRule::SqrtScaled { c } => unit_e1(dim, c * t.sqrt()),
            EndpointRule::QuarterPower { c } => unit_e1(dim, c * t.powf(0.25)),
        }
    }

    /// Checks the rule against the hypotheses of `theorem` from its form
    /// alone (no sampling of horizons).
    pub fn check(&self, theorem: Theorem, dim: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("{} endpoint rule: {m}", theorem.label())));
        match (theorem, self) {
            (Theorem::T1, EndpointRule::Fixed { y }) => {
                if y.len() != dim {
                    return bad(&format!("y has dimension {}, expected {dim}", y.len()));
                }
                Ok(())
            }
            (Theorem::T1, _) => bad("the end point must stay fixed"),
            (Theorem::T2b, EndpointRule::SqrtScaled { c }) if *c > 0.0 && c.is_finite() => Ok(()),
            (Theorem::T2b, _) => bad("needs y(t) = c·√t·e₁ with 0 < c < ∞, so that |y|²/t stays away from 0 and ∞"),
            (Theorem::T2a, EndpointRule::QuarterPower { c }) if *c > 0.0 && c.is_finite() => Ok(()),
            (Theorem::T2a, _) => bad("needs y(t) = c·t^(1/4)·e₁ with c > 0, so that |y| → ∞ and |y|²/t → 0"),
            (Theorem::L4a | Theorem::L4b, _) => Ok(()),
        }
    }
}

fn unit_e1(dim: usize, len: f64) -> Vec<f64> {
    let mut y = vec![0.0; dim];
    y[0] = len;
    y
}

/// The endpoint window `u(t)`: increasing, unbounded, `u(t)/t → 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum URule {
    /// `u(t) = c·√t`.
    Sqrt { c: f64 },
    /// `u(t) = c·t^p` with `0 < p < 1`.
    Power { c: f64, p: f64 },
}

impl Default for URule {
    fn default() -> Self {
        URule::Sqrt { c: 1.0 }
    }
}

impl URule {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            URule::Sqrt { c } => c * t.sqrt(),
            URule::Power { c, p } => c * t.powf(p),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            URule::Sqrt { c } => c > 0.0 && c.is_finite(),
            URule::Power { c, p } => c > 0.0 && c.is_finite() && p > 0.0 && p < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("u rule {self:?} must have c > 0 and 0 < p < 1")))
        }
    }
}

fn default_ks() -> Vec<u32> {
    vec![1, 2]
}

fn default_rel_tolerance() -> f64 {
    1e-2
}

fn default_sigmas() -> f64 {
    3.0
}

/// A sweep over horizons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub theorem: Theorem,
    pub dim: usize,
    pub potential: PotentialKind,
    /// Start point (the limit start point for Lemma 4(a)).
    pub x: Vec<f64>,
    /// End point rule; defaults to `y = x` for Theorem 1.
    #[serde(default)]
    pub endpoint: Option<EndpointRule>,
    pub horizons: Vec<f64>,
    /// Start points `x_n`, one per horizon (Lemma 4 only).
    #[serde(default)]
    pub starts: Vec<Vec<f64>>,
    #[serde(default = "default_ks")]
    pub ks: Vec<u32>,
    /// Absolute `α` values.
    #[serde(default)]
    pub alphas: Vec<f64>,
    /// `α` values as multiples of `α₀ = 1/K₁`.
    #[serde(default)]
    pub alpha_fractions: Vec<f64>,
    #[serde(default)]
    pub u_rule: URule,
    /// Paths per horizon.
    pub samples: usize,
    /// Paths per one-sided target leg; defaults to `samples`.
    #[serde(default)]
    pub target_samples: Option<usize>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub escape: EscapeWalk,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default)]
    pub quad: QuadConfig,
    pub seed: u64,
    /// Gaps below `rel_tolerance·|target|` pass regardless of noise.
    #[serde(default = "default_rel_tolerance")]
    pub rel_tolerance: f64,
    /// Gaps below this many combined standard errors pass.
    #[serde(default = "default_sigmas")]
    pub sigmas: f64,
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        if self.dim < MIN_TRANSIENT_DIM {
            return Err(Error::Config(format!(
                "dimension {} is not allowed: the limit theorems assume d ≥ 3 (\"We assume throughout that d ≥ 3\")",
                self.dim
            )));
        }
        if self.x.len() != self.dim {
            return Err(Error::Config(format!("x has dimension {}, expected {}", self.x.len(), self.dim)));
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::Config("horizons must be a nonempty list of positive finite times".into()));
        }
        if self.horizons.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("horizons must be strictly increasing".into()));
        }
        if self.samples < 2 || self.target_samples.is_some_and(|n| n < 2) {
            return Err(Error::Config("sample budgets must be at least 2".into()));
        }
        if self.ks.contains(&0) {
            return Err(Error::Config("moment orders must be at least 1".into()));
        }
        if self.alphas.iter().chain(&self.alpha_fractions).any(|a| !a.is_finite()) {
            return Err(Error::Config("alpha values must be finite".into()));
        }
        if !(self.rel_tolerance >= 0.0 && self.sigmas > 0.0) {
            return Err(Error::Config("tolerances must be nonnegative".into()));
        }
        self.u_rule.validate()?;
        self.escape.validate()?;
        self.quad.validate()?;
        self.endpoint_rule().check(self.theorem, self.dim)?;
        match self.theorem {
            Theorem::L4a | Theorem::L4b => {
                if self.starts.len() != self.horizons.len() {
                    return Err(Error::Config(format!(
                        "{} needs one start point per horizon ({} starts, {} horizons)",
                        self.theorem.label(),
                        self.starts.len(),
                        self.horizons.len()
                    )));
                }
                if self.starts.iter().any(|s| s.len() != self.dim) {
                    return Err(Error::Config("start points must match the dimension".into()));
                }
                if self.theorem == Theorem::L4b {
                    let norms: Vec<f64> = self.starts.iter().map(|s| crate::norm2(s).sqrt()).collect();
                    if norms.windows(2).any(|w| w[1] <= w[0]) {
                        return Err(Error::Config("lemma4b start points must move strictly outwards".into()));
                    }
                }
            }
            _ => {
                if !self.starts.is_empty() {
                    return Err(Error::Config(format!("{} takes no start sequence", self.theorem.label())));
                }
            }
        }
        self.potential()?;
        Ok(())
    }

    pub fn potential(&self) -> Result<Potential> {
        Potential::new(self.dim, self.potential.clone())
    }

    pub fn endpoint_rule(&self) -> EndpointRule {
        self.endpoint.clone().unwrap_or_else(|| EndpointRule::Fixed { y: self.x.clone() })
    }

    fn target_samples(&self) -> usize {
        self.target_samples.unwrap_or(self.samples)
    }

    /// Seed for job `index` under `tag`.
    pub fn job_seed(&self, tag: &str, index: u64) -> u64 {
        let mut label = serde_json::to_vec(self).expect("plans serialize");
        label.extend_from_slice(tag.as_bytes());
        derive_seed(self.seed, &label, index)
    }

    fn mc(&self, seed: u64) -> McConfig {
        McConfig { seed, grid: self.grid.clone(), antithetic: self.antithetic, escape: self.escape }
    }
}

/// One line of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub statistic: String,
    pub k_or_alpha: f64,
    pub t: f64,
    pub value: f64,
    pub std_error: f64,
    pub target: f64,
    pub target_error: f64,
    pub gap: f64,
    /// `PASS`/`FAIL` on the last horizon of a statistic, empty otherwise.
    pub verdict: String,
}

/// How a statistic's gap sequence is judged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictRule {
    /// Last gap within the noise threshold and below the first gap.
    Converges,
    /// Gaps strictly decreasing along the sweep (ties allowed only at 0).
    Decreasing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub statistic: String,
    pub k_or_alpha: f64,
    pub rule: VerdictRule,
    pub first_gap: f64,
    pub last_gap: f64,
    pub threshold: f64,
    pub within_threshold: bool,
    pub shrinking: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub theorem: Theorem,
    pub rows: Vec<ReportRow>,
    pub verdicts: Vec<Verdict>,
    pub pass: bool,
    pub bounds: Option<BoundsReport>,
    pub notes: Vec<String>,
}

pub const CSV_HEADER: &str = "statistic,k_or_alpha,t,value,std_error,target,target_error,gap,verdict";

/// Shortest-exact formatting is not bitwise stable across printers, so all
/// floats go out with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let cells = [
                r.statistic.clone(),
                fmt_float(r.k_or_alpha),
                fmt_float(r.t),
                fmt_float(r.value),
                fmt_float(r.std_error),
                fmt_float(r.target),
                fmt_float(r.target_error),
                fmt_float(r.gap),
                r.verdict.clone(),
            ];
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Rows of one statistic in horizon order.
    pub fn series(&self, statistic: &str, k_or_alpha: f64) -> Vec<&ReportRow> {
        self.rows
            .iter()
            .filter(|r| r.statistic == statistic && r.k_or_alpha == k_or_alpha)
            .collect()
    }
}

/// Accumulates rows per statistic and judges them at the end.
struct ReportBuilder {
    sigmas: f64,
    rel: f64,
    series: Vec<(String, f64, VerdictRule, Vec<ReportRow>)>,
}

impl ReportBuilder {
    fn new(plan: &SweepPlan) -> Self {
        Self { sigmas: plan.sigmas, rel: plan.rel_tolerance, series: Vec::new() }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(&mut self, stat: &str, key: f64, rule: VerdictRule, t: f64, value: McEstimate, target: f64, target_error: f64) {
        let row = ReportRow {
            statistic: stat.to_string(),
            k_or_alpha: key,
            t,
            value: value.mean,
            std_error: value.std_error,
            target,
            target_error,
            gap: (value.mean - target).abs(),
            verdict: String::new(),
        };
        match self.series.iter_mut().find(|(s, k, _, _)| s == stat && *k == key) {
            Some((_, _, _, rows)) => rows.push(row),
            None => self.series.push((stat.to_string(), key, rule, vec![row])),
        }
    }

    fn finish(self, theorem: Theorem, bounds: Option<BoundsReport>, notes: Vec<String>) -> ConvergenceReport {
        let mut verdicts = Vec::new();
        let mut grouped = Vec::new();
        for (stat, key, rule, mut rows) in self.series {
            let first = rows[0].gap;
            let last_row = rows.last().expect("nonempty series");
            let last = last_row.gap;
            let noise = combined_se(last_row.std_error, last_row.target_error);
            let threshold = (self.sigmas * noise).max(self.rel * last_row.target.abs());
            let gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
            let (within, shrinking) = match rule {
                VerdictRule::Converges => (last <= threshold, rows.len() == 1 || last < first || (last == 0.0 && first == 0.0)),
                VerdictRule::Decreasing => (true, gaps.windows(2).all(|w| w[1] < w[0] || (w[0] == 0.0 && w[1] == 0.0))),
            };
            let pass = within && shrinking;
            rows.last_mut().expect("nonempty series").verdict = if pass { "PASS" } else { "FAIL" }.to_string();
            verdicts.push(Verdict {
                statistic: stat,
                k_or_alpha: key,
                rule,
                first_gap: first,
                last_gap: last,
                threshold,
                within_threshold: within,
                shrinking,
                pass,
            });
            grouped.push(rows);
        }
        // rows ordered by horizon, then by statistic in insertion order
        let mut rows: Vec<ReportRow> = Vec::new();
        let max_len = grouped.iter().map(Vec::len).max().unwrap_or(0);
        for i in 0..max_len {
            for g in &grouped {
                if let Some(r) = g.get(i) {
                    rows.push(r.clone());
                }
            }
        }
        let pass = verdicts.iter().all(|v| v.pass);
        ConvergenceReport { theorem, rows, verdicts, pass, bounds, notes }
    }
}

/// `K₁` bounds and the resolved `α` list of a plan.
fn resolve_alphas(plan: &SweepPlan, v: &Potential, notes: &mut Vec<String>) -> Result<(BoundsReport, Vec<f64>)> {
    let bounds = k1_bound(v, &default_probes(v))?;
    let a0 = bounds.alpha0_or_inf();
    let mut alphas = plan.alphas.clone();
    if a0.is_finite() {
        alphas.extend(plan.alpha_fractions.iter().map(|f| f * a0));
    } else if !plan.alpha_fractions.is_empty() {
        notes.push("alpha0 is unbounded (K1 = 0); alpha_fractions were ignored".into());
    }
    let nonneg = v.is_nonnegative();
    for &a in &alphas {
        if a.abs() >= a0 {
            if nonneg && a > 0.0 {
                notes.push(format!(
                    "alpha = {a} is at or above alpha0 = {a0}; finiteness for a nonnegative potential then rests on the (unknown) blow-up threshold"
                ));
            } else {
                return Err(Error::Config(format!("alpha = {a} lies outside (-alpha0, alpha0) with alpha0 = {a0}")));
            }
        }
    }
    Ok((bounds, alphas))
}

/// Product `E e^{αA}·E e^{αB}` of independent estimates with its delta-method
/// standard error.
fn product(a: &McEstimate, b: &McEstimate) -> (f64, f64) {
    let mean = a.mean * b.mean;
    let se = ((a.std_error * b.mean).powi(2) + (b.std_error * a.mean).powi(2)).sqrt();
    (mean, se)
}

fn quad_target(cfg: &QuadConfig, f: impl Fn(&QuadConfig) -> Result<f64>) -> Result<(f64, f64)> {
    let q = with_error(cfg, f)?;
    Ok((q.value, q.error))
}

/// Bridge statistics against the two-sided free limit.
pub fn run_theorem1(plan: &SweepPlan) -> Result<ConvergenceReport> {
    if plan.theorem != Theorem::T1 {
        return domain(format!("plan is for {}, not theorem1", plan.theorem.label()));
    }
    plan.validate()?;
    let v = plan.potential()?;
    let mut notes = Vec::new();
    let (bounds, alphas) = resolve_alphas(plan, &v, &mut notes)?;
    let x = &plan.x;
    let y = plan.endpoint_rule().at(0.0, plan.dim);
    let mut b = ReportBuilder::new(plan);

    let mut moment_targets = Vec::new();
    for &k in &plan.ks {
        moment_targets.push(quad_target(&plan.quad, |c| quadrature::moment_two_sided(x, &y, &v, k, c))?);
    }
    let mgf_targets = if alphas.is_empty() {
        Vec::new()
    } else {
        let n = plan.target_samples();
        let sx = sample_functional(&Functional::Free { x: x.clone(), horizon: f64::INFINITY }, &v, n, &plan.mc(plan.job_seed("target-x", 0)))?;
        let sy = sample_functional(&Functional::Free { x: y.clone(), horizon: f64::INFINITY }, &v, n, &plan.mc(plan.job_seed("target-y", 0)))?;
        alphas.iter().map(|&a| product(&mgf_point(&sx, a), &mgf_point(&sy, a))).collect()
    };

    for (i, &t) in plan.horizons.iter().enumerate() {
        BridgeSpec::new(x.clone(), y.clone(), t)?;
        let samples = bridge_samples(plan, &v, x, &y, t, i)?;
        for (&k, &(target, err)) in plan.ks.iter().zip(&moment_targets) {
            b.push("moment", k as f64, VerdictRule::Converges, t, moment_of(&samples, k), target, err);
        }
        for (&a, &(target, err)) in alphas.iter().zip(&mgf_targets) {
            b.push("mgf", a, VerdictRule::Converges, t, mgf_point(&samples, a), target, err);
        }
        for &k in plan.ks.iter().filter(|&&k| k <= plan.quad.k_max.min(2)) {
            let u = plan.u_rule.at(t).min(t);
            let d = quadrature::d_diagnostic(x, &y, t, u, &v, k, &plan.quad)?;
            b.push("d_diagnostic", k as f64, VerdictRule::Decreasing, t, McEstimate::exact(d, 0), 0.0, 0.0);
        }
    }
    Ok(b.finish(Theorem::T1, Some(bounds), notes))
}

fn bridge_samples(plan: &SweepPlan, v: &Potential, x: &[f64], y: &[f64], t: f64, i: usize) -> Result<SampleSet> {
    let f = Functional::Bridge { x: x.to_vec(), y: y.to_vec(), t };
    sample_functional(&f, v, plan.samples, &plan.mc(plan.job_seed("bridge", i as u64)))
}

/// Bridge statistics with a receding end point against the one-sided limit.
pub fn run_theorem2(plan: &SweepPlan) -> Result<ConvergenceReport> {
    if !matches!(plan.theorem, Theorem::T2a | Theorem::T2b) {
        return domain(format!("plan is for {}, not theorem2", plan.theorem.label()));
    }
    plan.validate()?;
    let v = plan.potential()?;
    let mut notes = Vec::new();
    let (bounds, alphas) = resolve_alphas(plan, &v, &mut notes)?;
    let x = &plan.x;
    let rule = plan.endpoint_rule();
    let mut b = ReportBuilder::new(plan);
    let mut moment_targets = Vec::new();
    for &k in &plan.ks {
        moment_targets.push(quad_target(&plan.quad, |c| quadrature::moment_free(x, f64::INFINITY, &v, k, c))?);
    }
    let mgf_targets: Vec<(f64, f64)> = if alphas.is_empty() {
        Vec::new()
    } else {
        let sx = sample_functional(
            &Functional::Free { x: x.clone(), horizon: f64::INFINITY },
            &v,
            plan.target_samples(),
            &plan.mc(plan.job_seed("target-x", 0)),
        )?;
        alphas.iter().map(|&a| {
            let e = mgf_point(&sx, a);
            (e.mean, e.std_error)
        })
        .collect()
    };
    for (i, &t) in plan.horizons.iter().enumerate() {
        let y = rule.at(t, plan.dim);
        let samples = bridge_samples(plan, &v, x, &y, t, i)?;
        for (&k, &(target, err)) in plan.ks.iter().zip(&moment_targets) {
            b.push("moment", k as f64, VerdictRule::Converges, t, moment_of(&samples, k), target, err);
        }
        for (&a, &(target, err)) in alphas.iter().zip(&mgf_targets) {
            b.push("mgf", a, VerdictRule::Converges, t, mgf_point(&samples, a), target, err);
        }
    }
    Ok(b.finish(plan.theorem, Some(bounds), notes))
}

/// Free-motion statistics along a start-point sequence.
///
/// Part (a) compares `E Y_{x_n}(t_n)^k` (by quadrature) and
/// `E e^{αY_{x_n}(t_n)}` (by Monte Carlo) with their limits at `x`, `T = ∞`.
/// Part (b) tracks `|E e^{αY_{x_n}(t_n)} − 1|`, which must decrease as the
/// start escapes; the stated limit 0 of the MGF itself is not asserted.
pub fn run_lemma4(plan: &SweepPlan) -> Result<ConvergenceReport> {
    if !matches!(plan.theorem, Theorem::L4a | Theorem::L4b) {
        return domain(format!("plan is for {}, not lemma4", plan.theorem.label()));
    }
    plan.validate()?;
    let v = plan.potential()?;
    let mut notes = Vec::new();
    let (bounds, alphas) = resolve_alphas(plan, &v, &mut notes)?;
    let mut b = ReportBuilder::new(plan);
    match plan.theorem {
        Theorem::L4a => {
            let x = &plan.x;
            let mut moment_targets = Vec::new();
            for &k in &plan.ks {
                moment_targets.push(quad_target(&plan.quad, |c| quadrature::moment_free(x, f64::INFINITY, &v, k, c))?);
            }
            let mgf_targets: Vec<McEstimate> = if alphas.is_empty() {
                Vec::new()
            } else {
                let s = sample_functional(
                    &Functional::Free { x: x.clone(), horizon: f64::INFINITY },
                    &v,
                    plan.target_samples(),
                    &plan.mc(plan.job_seed("target-x", 0)),
                )?;
                alphas.iter().map(|&a| mgf_point(&s, a)).collect()
            };
            for (i, (&t, xn)) in plan.horizons.iter().zip(&plan.starts).enumerate() {
                for (&k, &(target, err)) in plan.ks.iter().zip(&moment_targets) {
                    let q = with_error(&plan.quad, |c| quadrature::moment_free(xn, t, &v, k, c))?;
                    // quadrature error plays the role of the standard error
                    let est = McEstimate { mean: q.value, std_error: q.error, n: 0, max_sample_share: 0.0 };
                    b.push("moment", k as f64, VerdictRule::Converges, t, est, target, err);
                }
                if !alphas.is_empty() {
                    let s = sample_functional(
                        &Functional::Free { x: xn.clone(), horizon: t },
                        &v,
                        plan.samples,
                        &plan.mc(plan.job_seed("free", i as u64)),
                    )?;
                    for (&a, target) in alphas.iter().zip(&mgf_targets) {
                        b.push("mgf", a, VerdictRule::Converges, t, mgf_point(&s, a), target.mean, target.std_error);
                    }
                }
            }
        }
        _ => {
            notes.push(
                "lemma4b: the MGF of Y from an escaping start tends to 1 for a nonnegative potential; \
                 the gap reported is |MGF - 1| and the stated limit 0 is not asserted"
                    .into(),
            );
            for (i, (&t, xn)) in plan.horizons.iter().zip(&plan.starts).enumerate() {
                let s = sample_functional(
                    &Functional::Free { x: xn.clone(), horizon: t },
                    &v,
                    plan.samples,
                    &plan.mc(plan.job_seed("free", i as u64)),
                )?;
                for &a in &alphas {
                    b.push("mgf", a, VerdictRule::Decreasing, t, mgf_point(&s, a), 1.0, 0.0);
                }
                for &k in &plan.ks {
                    b.push("moment", k as f64, VerdictRule::Decreasing, t, moment_of(&s, k), 0.0, 0.0);
                }
            }
        }
    }
    Ok(b.finish(plan.theorem, Some(bounds), notes))
}

/// One horizon of a density-ratio sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QRatioRow {
    pub t: f64,
    pub u: f64,
    pub y: Vec<f64>,
    pub configurations: usize,
    pub max_abs_dev: f64,
    pub min_q: f64,
    pub max_q: f64,
    /// Ratio with no interior points (always exactly 1).
    pub k0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QRatioTable {
    pub rows: Vec<QRatioRow>,
    /// `max|Q − 1|` strictly decreasing along the horizons.
    pub decreasing: bool,
    /// Largest `δ` with `δ ≤ Q ≤ 1/δ` over the whole sweep.
    pub delta: f64,
}

/// `max |Q − 1|` over configurations whose points lie at the probes, with
/// the early times in `(0, u)`, the late ones in `(t − u, t)`, and `Q` taken
/// on the interval that straddles the bulk `[u, t − u]`.
pub fn q_ratio_sweep(x: &[f64], endpoint: &EndpointRule, horizons: &[f64], u_rule: &URule, probes: &[Vec<f64>]) -> Result<QRatioTable> {
    u_rule.validate()?;
    if probes.is_empty() {
        return domain("probe set is empty");
    }
    let d = x.len();
    if probes.iter().any(|p| p.len() != d) {
        return domain("probe dimension differs from the start point");
    }
    let fractions = [0.1, 0.5, 0.9];
    let mut rows = Vec::new();
    for &t in horizons {
        let u = u_rule.at(t);
        if !(u > 0.0 && 2.0 * u < t) {
            return domain(format!("window u = {u} leaves no bulk in [0, {t}]"));
        }
        let y = endpoint.at(t, d);
        let k0 = density_ratio_q(x, &y, &TimePoints::new(vec![], t)?, &SpacePoints::new(vec![], d)?, 0)?;
        let mut dev: f64 = 0.0;
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        let mut count = 0;
        let mut record = |q: f64| {
            dev = dev.max((q - 1.0).abs());
            lo = lo.min(q);
            hi = hi.max(q);
            count += 1;
        };
        for fa in fractions {
            let early = fa * u;
            let late = t - fa * u;
            for p in probes {
                // one point, early or late; the straddling interval is to t or from 0
                let pts = SpacePoints::new(vec![p.clone()], d)?;
                record(density_ratio_q(x, &y, &TimePoints::new(vec![early], t)?, &pts, 1)?);
                record(density_ratio_q(x, &y, &TimePoints::new(vec![late], t)?, &pts, 0)?);
                // two points, one on each side
                for p2 in probes {
                    let pts = SpacePoints::new(vec![p.clone(), p2.clone()], d)?;
                    record(density_ratio_q(x, &y, &TimePoints::new(vec![early, late], t)?, &pts, 1)?);
                }
            }
        }
        rows.push(QRatioRow { t, u, y, configurations: count, max_abs_dev: dev, min_q: lo, max_q: hi, k0 });
    }
    let decreasing = rows.windows(2).all(|w| w[1].max_abs_dev < w[0].max_abs_dev);
    let delta = rows.iter().map(|r| r.min_q.min(1.0 / r.max_q)).fold(1.0, f64::min);
    Ok(QRatioTable { rows, decreasing, delta })
}

/// Outcome of the Brownian scaling check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingCheck {
    pub t: f64,
    pub lambda: f64,
    pub scaled_horizon: f64,
    pub original: McEstimate,
    pub scaled: McEstimate,
    pub gap: f64,
    pub combined_se: f64,
    pub within_3_sigma: bool,
    /// Largest pathwise difference when both runs share their innovations
    /// (the scaled run on the scaled grid): zero up to rounding.
    pub coupled_max_diff: f64,
}

/// Compares `Z` for `(t, v, x, y)` with `Z` for
/// `(t/λ², λ² v(λ·), x/λ, y/λ)`; `λ = √t` gives horizon 1 and a support
/// shrunk by `√t`.
pub fn scaling_restatement(x: &[f64], y: &[f64], t: f64, v: &Potential, lambda: f64, n: usize, cfg: &McConfig) -> Result<ScalingCheck> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return domain(format!("scale factor must be positive, got {lambda}"));
    }
    let w = v.brownian_rescaled(lambda)?;
    let xs: Vec<f64> = x.iter().map(|c| c / lambda).collect();
    let ys: Vec<f64> = y.iter().map(|c| c / lambda).collect();
    let ts = t / (lambda * lambda);
    let spec = cfg.grid.clone().unwrap_or_else(GridSpec::endpoint_refined);
    let orig_f = Functional::Bridge { x: x.to_vec(), y: y.to_vec(), t };
    let scaled_f = Functional::Bridge { x: xs, y: ys, t: ts };
    let (base, coupled) = if spec.is_adaptive() {
        // steps are measured in units of R², so they rescale on their own
        (cfg.clone(), cfg.clone())
    } else {
        let grid = spec.build(t)?;
        let scaled_grid = grid.scaled(1.0 / (lambda * lambda))?;
        (
            McConfig { grid: Some(GridSpec::Explicit { interior: interior(grid.nodes()) }), ..cfg.clone() },
            McConfig { grid: Some(GridSpec::Explicit { interior: interior(scaled_grid.nodes()) }), ..cfg.clone() },
        )
    };
    let a = sample_functional(&orig_f, v, n, &base)?;
    let c = sample_functional(&scaled_f, &w, n, &coupled)?;
    let coupled_max_diff = a.values.iter().zip(&c.values).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let independent = McConfig { seed: derive_seed(cfg.seed, b"scaling", 1), ..coupled };
    let s = sample_functional(&scaled_f, &w, n, &independent)?;
    let original = moment_of(&a, 1);
    let scaled = moment_of(&s, 1);
    let gap = (original.mean - scaled.mean).abs();
    let se = combined_se(original.std_error, scaled.std_error);
    Ok(ScalingCheck {
        t,
        lambda,
        scaled_horizon: ts,
        original,
        scaled,
        gap,
        combined_se: se,
        within_3_sigma: gap <= 3.0 * se,
        coupled_max_diff,
    })
}

fn interior(nodes: &[f64]) -> Vec<f64> {
    nodes[1..nodes.len() - 1].to_vec()
}
