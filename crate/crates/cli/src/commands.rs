//! Subcommand bodies. Each returns the files to write and, for commands
//! that judge something, an overall verdict.

use bridge_integrals::estimate::{bloch_green, mc_mgf, moment_of, sample_functional};
use bridge_integrals::gaussian::transition_density;
use bridge_integrals::lab::{fmt_float, run_lemma4, run_theorem1, run_theorem2, ConvergenceReport, Theorem, CSV_HEADER};
use bridge_integrals::potential::{alpha1_divergence_probe, default_probes, k1_bound};
use bridge_integrals::quadrature::{moment_bridge, moment_free, moment_two_sided_at, with_error};
use bridge_integrals::rng::derive_seed;
use bridge_integrals::{Error, Functional, Potential, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// What a command produced.
pub struct Outcome {
    /// The main table, as CSV text and as a JSON value.
    pub csv: Option<String>,
    pub json: Value,
    /// `None` for commands without a verdict.
    pub pass: Option<bool>,
    pub notes: Vec<String>,
}

/// Seed of job `index` of `command`; depends on the whole configuration.
fn job_seed(cfg: &ExperimentConfig, command: &str, index: u64) -> u64 {
    let mut label = serde_json::to_vec(cfg).expect("configs serialize");
    label.extend_from_slice(command.as_bytes());
    derive_seed(cfg.seed, &label, index)
}

fn csv_line(cells: &[String]) -> String {
    let mut s = cells.join(",");
    s.push('\n');
    s
}

fn fmt_point(p: &[f64]) -> String {
    p.iter().map(|c| fmt_float(*c)).collect::<Vec<_>>().join(";")
}

/// Raw samples of the configured functional, one row per path.
pub fn sample(cfg: &ExperimentConfig) -> Result<Outcome> {
    let v = cfg.potential()?;
    let mut csv = String::from("t,index,value\n");
    let mut table = Vec::new();
    for (i, t) in cfg.horizons()?.into_iter().enumerate() {
        let f = cfg.functional(t)?;
        let s = sample_functional(&f, &v, cfg.samples, &cfg.mc(job_seed(cfg, "sample", i as u64)))?;
        for (j, z) in s.values.iter().enumerate() {
            csv.push_str(&csv_line(&[fmt_float(t), j.to_string(), fmt_float(*z)]));
        }
        table.push(json!({ "t": horizon_json(t), "values": s.values }));
    }
    Ok(Outcome { csv: Some(csv), json: json!(table), pass: None, notes: Vec::new() })
}

fn horizon_json(t: f64) -> Value {
    if t.is_finite() {
        json!(t)
    } else {
        Value::Null
    }
}

fn resolve_alphas(cfg: &ExperimentConfig, v: &Potential, notes: &mut Vec<String>) -> Result<(Vec<f64>, Option<f64>)> {
    let mut alphas = cfg.alphas.clone();
    if cfg.alpha_fractions.is_empty() {
        return Ok((alphas, None));
    }
    let b = k1_bound(v, &default_probes(v))?;
    match b.alpha0 {
        Some(a0) => alphas.extend(cfg.alpha_fractions.iter().map(|f| f * a0)),
        None => notes.push("alpha0 is unbounded (K1 = 0); alpha_fractions were ignored".into()),
    }
    Ok((alphas, b.alpha0))
}

/// Empirical MGF over the `α` grid, per horizon.
pub fn mgf(cfg: &ExperimentConfig) -> Result<Outcome> {
    let v = cfg.potential()?;
    let mut notes = Vec::new();
    let (alphas, _) = resolve_alphas(cfg, &v, &mut notes)?;
    if alphas.is_empty() {
        return Err(Error::Config("mgf needs alphas or alpha_fractions".into()));
    }
    let bounds = if v.dim() >= bridge_integrals::MIN_TRANSIENT_DIM { Some(k1_bound(&v, &default_probes(&v))?) } else { None };
    let mut csv = String::from("alpha,t,value,std_error,max_sample_share,stable\n");
    let mut table = Vec::new();
    for (i, t) in cfg.horizons()?.into_iter().enumerate() {
        let f = cfg.functional(t)?;
        let curve = mc_mgf(&f, &v, &alphas, cfg.samples, &cfg.mc(job_seed(cfg, "mgf", i as u64)), bounds.as_ref())?;
        for ((a, e), st) in curve.alphas.iter().zip(&curve.estimates).zip(&curve.stable) {
            csv.push_str(&csv_line(&[
                fmt_float(*a),
                fmt_float(t),
                fmt_float(e.mean),
                fmt_float(e.std_error),
                fmt_float(e.max_sample_share),
                st.to_string(),
            ]));
        }
        notes.extend(curve.warnings.iter().cloned());
        table.push(json!({ "t": horizon_json(t), "curve": curve }));
    }
    notes.dedup();
    Ok(Outcome { csv: Some(csv), json: json!(table), pass: None, notes })
}

fn quad_moment(cfg: &ExperimentConfig, f: &Functional, v: &Potential, k: u32) -> Result<(f64, f64)> {
    let q = with_error(&cfg.quad, |c| match f {
        Functional::Bridge { x, y, t } => moment_bridge(x, y, *t, v, k, c),
        Functional::Free { x, horizon } => moment_free(x, *horizon, v, k, c),
        Functional::TwoSided { x, y, horizon } => moment_two_sided_at(x, y, *horizon, v, k, c),
    })?;
    Ok((q.value, q.error))
}

#[derive(Serialize)]
struct Row {
    statistic: &'static str,
    k_or_alpha: f64,
    t: Option<f64>,
    value: f64,
    std_error: f64,
    target: Option<f64>,
    target_error: Option<f64>,
    gap: Option<f64>,
    verdict: String,
}

/// Monte Carlo moments beside their quadrature values. A row passes when
/// `|MC − quadrature| < σ·(SE + quadrature error)`.
pub fn moments(cfg: &ExperimentConfig) -> Result<Outcome> {
    let v = cfg.potential()?;
    let mut csv = format!("{CSV_HEADER}\n");
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    let mut pass = true;
    for (i, t) in cfg.horizons()?.into_iter().enumerate() {
        let f = cfg.functional(t)?;
        let s = sample_functional(&f, &v, cfg.samples, &cfg.mc(job_seed(cfg, "moments", i as u64)))?;
        for &k in &cfg.ks {
            let mc = moment_of(&s, k);
            let (target, err, gap, verdict) = match quad_moment(cfg, &f, &v, k) {
                Ok((q, e)) => {
                    let gap = (mc.mean - q).abs();
                    let ok = gap < cfg.sigmas * (mc.std_error + e);
                    pass &= ok;
                    (Some(q), Some(e), Some(gap), if ok { "PASS" } else { "FAIL" }.to_string())
                }
                Err(Error::Unsupported(m)) => {
                    notes.push(format!("no quadrature for k = {k} at t = {t}: {m}"));
                    (None, None, None, "n/a".to_string())
                }
                Err(e) => return Err(e),
            };
            let opt = |x: Option<f64>| x.map(fmt_float).unwrap_or_default();
            csv.push_str(&csv_line(&[
                "moment".into(),
                fmt_float(k as f64),
                fmt_float(t),
                fmt_float(mc.mean),
                fmt_float(mc.std_error),
                opt(target),
                opt(err),
                opt(gap),
                verdict.clone(),
            ]));
            rows.push(Row {
                statistic: "moment",
                k_or_alpha: k as f64,
                t: t.is_finite().then_some(t),
                value: mc.mean,
                std_error: mc.std_error,
                target,
                target_error: err,
                gap,
                verdict,
            });
        }
    }
    Ok(Outcome { csv: Some(csv), json: json!(rows), pass: Some(pass), notes })
}

/// `K₁`, `α₀` and, when an `α` grid is given, the blow-up probe.
pub fn bounds(cfg: &ExperimentConfig) -> Result<Outcome> {
    let v = cfg.potential()?;
    let probes = cfg.bounds.probes.clone().unwrap_or_else(|| default_probes(&v));
    let mut report = k1_bound(&v, &probes)?;
    let mut notes = Vec::new();
    if !cfg.bounds.alpha1_alphas.is_empty() {
        let horizon = cfg.bounds.alpha1_horizon.unwrap_or(f64::INFINITY);
        let n = cfg.bounds.alpha1_samples.unwrap_or(cfg.samples);
        report.alpha1 = Some(alpha1_divergence_probe(
            &v,
            &cfg.bounds.alpha1_alphas,
            n,
            horizon,
            &cfg.mc(job_seed(cfg, "bounds", 0)),
        )?);
        notes.push("the alpha1 bracket is empirical: sample dominance, not a computed threshold".into());
    }
    let json = serde_json::to_value(&report).expect("bounds serialize");
    Ok(Outcome { csv: None, json, pass: None, notes })
}

fn report_outcome(r: ConvergenceReport) -> Outcome {
    let csv = r.to_csv();
    let pass = Some(r.pass);
    let notes = r.notes.clone();
    Outcome { csv: Some(csv), json: serde_json::to_value(&r).expect("reports serialize"), pass, notes }
}

pub fn theorem1(cfg: &ExperimentConfig) -> Result<Outcome> {
    Ok(report_outcome(run_theorem1(&cfg.sweep_plan(Theorem::T1)?)?))
}

pub fn theorem2(cfg: &ExperimentConfig) -> Result<Outcome> {
    let plan = match cfg.theorem2_variant() {
        Ok(t) => cfg.sweep_plan(t)?,
        // dimension errors take precedence over a missing rule
        Err(e) => {
            cfg.sweep_plan(Theorem::T2b)?;
            return Err(e);
        }
    };
    Ok(report_outcome(run_theorem2(&plan)?))
}

pub fn lemma4(cfg: &ExperimentConfig) -> Result<Outcome> {
    Ok(report_outcome(run_lemma4(&cfg.sweep_plan(cfg.lemma4_variant())?)?))
}

/// `G(t; x, y) = q(t; y − x)·E e^{−Z(t)}` over start points, end points and
/// horizons.
pub fn bloch(cfg: &ExperimentConfig) -> Result<Outcome> {
    let v = cfg.potential()?;
    if !v.is_nonnegative() {
        return Err(Error::Config("the Bloch kernel is tabulated for nonnegative potentials only".into()));
    }
    let xs = if cfg.bloch.xs.is_empty() { vec![cfg.x.clone()] } else { cfg.bloch.xs.clone() };
    let ys = if cfg.bloch.ys.is_empty() { vec![cfg.end_point()?] } else { cfg.bloch.ys.clone() };
    if xs.iter().chain(&ys).any(|p| p.len() != cfg.dim) {
        return Err(Error::Config("bloch points must match the dimension".into()));
    }
    let mut csv = String::from("x,y,t,free_kernel,value,std_error\n");
    let mut rows = Vec::new();
    let mut index = 0u64;
    for x in &xs {
        for y in &ys {
            for t in cfg.horizons()? {
                if t.is_infinite() {
                    return Err(Error::Config("bloch horizons must be finite".into()));
                }
                let yx: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
                let q = transition_density(t, &yx)?;
                let g = bloch_green(x, y, t, &v, cfg.samples, &cfg.mc(job_seed(cfg, "bloch", index)))?;
                index += 1;
                csv.push_str(&csv_line(&[
                    fmt_point(x),
                    fmt_point(y),
                    fmt_float(t),
                    fmt_float(q),
                    fmt_float(g.mean),
                    fmt_float(g.std_error),
                ]));
                rows.push(json!({ "x": x, "y": y, "t": t, "free_kernel": q, "value": g.mean, "std_error": g.std_error }));
            }
        }
    }
    Ok(Outcome { csv: Some(csv), json: json!(rows), pass: None, notes: Vec::new() })
}
