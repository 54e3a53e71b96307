//! Experiment configuration files.
//!
//! One JSON schema serves every subcommand; each reads the fields it needs
//! and ignores the rest. Unknown keys are rejected. Times are in Brownian
//! time units, lengths in space units. JSON has no infinity, so an infinite
//! free-motion horizon is written `null`.

use bridge_integrals::lab::{EndpointRule, SweepPlan, Theorem, URule};
use bridge_integrals::path::{EscapeWalk, GridSpec};
use bridge_integrals::potential::PotentialKind;
use bridge_integrals::{Error, Functional, McConfig, Potential, QuadConfig, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionalKind {
    #[default]
    Bridge,
    Free,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lemma4Part {
    #[default]
    A,
    B,
}

/// Options of the `bounds` subcommand.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsOptions {
    /// Probe points for `K₁`; the default set when absent.
    pub probes: Option<Vec<Vec<f64>>>,
    /// Increasing `α` grid for the blow-up probe; empty skips it.
    pub alpha1_alphas: Vec<f64>,
    pub alpha1_samples: Option<usize>,
    /// Horizon of the blow-up probe; `null` is infinite.
    pub alpha1_horizon: Option<f64>,
}

/// Start and end points of the `bloch` table; default to `[x]` and `[y]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlochGrid {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    /// Output directory, overridden by `--out`.
    pub dir: Option<String>,
    /// File stem; defaults to the subcommand name.
    pub stem: Option<String>,
}

fn default_samples() -> usize {
    1000
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub potential: PotentialKind,
    #[serde(default)]
    pub functional: FunctionalKind,
    pub x: Vec<f64>,
    /// Fixed end point (bridge and two-sided functionals, theorem 1).
    #[serde(default)]
    pub y: Option<Vec<f64>>,
    /// Horizon-dependent end point (theorem 2).
    #[serde(default)]
    pub endpoint: Option<EndpointRule>,
    #[serde(default)]
    pub horizons: Vec<Option<f64>>,
    /// Start points, one per horizon (lemma 4).
    #[serde(default)]
    pub starts: Vec<Vec<f64>>,
    #[serde(default)]
    pub lemma4_part: Lemma4Part,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub escape: EscapeWalk,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub target_samples: Option<usize>,
    #[serde(default)]
    pub alphas: Vec<f64>,
    /// `α` as multiples of `α₀ = 1/K₁`.
    #[serde(default)]
    pub alpha_fractions: Vec<f64>,
    #[serde(default = "default_ks")]
    pub ks: Vec<u32>,
    #[serde(default)]
    pub quad: QuadConfig,
    #[serde(default)]
    pub u_rule: URule,
    #[serde(default = "default_rel_tolerance")]
    pub rel_tolerance: f64,
    #[serde(default = "default_sigmas")]
    pub sigmas: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub bounds: BoundsOptions,
    #[serde(default)]
    pub bloch: BlochGrid,
    #[serde(default)]
    pub output: OutputPaths,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// The potential, checked against the configured dimension.
    pub fn potential(&self) -> Result<Potential> {
        if self.x.len() != self.dim {
            return Err(Error::Config(format!("x has dimension {}, expected {}", self.x.len(), self.dim)));
        }
        let v = Potential::new(self.dim, self.potential.clone())?;
        if !v.is_zero() && !(v.support_radius() > 0.0) {
            return Err(Error::Config("the potential's support radius must be positive".into()));
        }
        Ok(v)
    }

    pub fn mc(&self, seed: u64) -> McConfig {
        McConfig { seed, grid: self.grid.clone(), antithetic: self.antithetic, escape: self.escape }
    }

    /// Horizons with `null` read as `∞`.
    pub fn horizons(&self) -> Result<Vec<f64>> {
        if self.horizons.is_empty() {
            return Err(Error::Config("horizons must not be empty".into()));
        }
        Ok(self.horizons.iter().map(|h| h.unwrap_or(f64::INFINITY)).collect())
    }

    fn finite_horizons(&self) -> Result<Vec<f64>> {
        let hs = self.horizons()?;
        if hs.iter().any(|h| h.is_infinite()) {
            return Err(Error::Config("sweeps need finite horizons".into()));
        }
        Ok(hs)
    }

    pub fn end_point(&self) -> Result<Vec<f64>> {
        let y = self.y.clone().ok_or_else(|| Error::Config("this functional needs an end point y".into()))?;
        if y.len() != self.dim {
            return Err(Error::Config(format!("y has dimension {}, expected {}", y.len(), self.dim)));
        }
        Ok(y)
    }

    /// The sampled functional at horizon `t`.
    pub fn functional(&self, t: f64) -> Result<Functional> {
        Ok(match self.functional {
            FunctionalKind::Bridge => {
                if t.is_infinite() {
                    return Err(Error::Config("bridge horizons must be finite".into()));
                }
                Functional::Bridge { x: self.x.clone(), y: self.end_point()?, t }
            }
            FunctionalKind::Free => Functional::Free { x: self.x.clone(), horizon: t },
            FunctionalKind::TwoSided => Functional::TwoSided { x: self.x.clone(), y: self.end_point()?, horizon: t },
        })
    }

    /// Sweep plan for a theorem subcommand.
    pub fn sweep_plan(&self, theorem: Theorem) -> Result<SweepPlan> {
        let endpoint = match theorem {
            Theorem::T1 => match (&self.y, &self.endpoint) {
                (Some(y), None) => Some(EndpointRule::Fixed { y: y.clone() }),
                (None, e) => e.clone(),
                (Some(_), Some(_)) => return Err(Error::Config("give either y or endpoint, not both".into())),
            },
            _ => self.endpoint.clone(),
        };
        let plan = SweepPlan {
            theorem,
            dim: self.dim,
            potential: self.potential.clone(),
            x: self.x.clone(),
            endpoint,
            horizons: self.finite_horizons()?,
            starts: self.starts.clone(),
            ks: self.ks.clone(),
            alphas: self.alphas.clone(),
            alpha_fractions: self.alpha_fractions.clone(),
            u_rule: self.u_rule,
            samples: self.samples,
            target_samples: self.target_samples,
            grid: self.grid.clone(),
            escape: self.escape,
            antithetic: self.antithetic,
            quad: self.quad.clone(),
            seed: self.seed,
            rel_tolerance: self.rel_tolerance,
            sigmas: self.sigmas,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// Theorem 2 variant implied by the end-point rule.
    pub fn theorem2_variant(&self) -> Result<Theorem> {
        match &self.endpoint {
            Some(EndpointRule::SqrtScaled { .. }) => Ok(Theorem::T2b),
            Some(EndpointRule::QuarterPower { .. }) => Ok(Theorem::T2a),
            _ => Err(Error::Config(
                "theorem2 needs an endpoint rule: sqrt_scaled (|y|²/t fixed) or quarter_power (|y|²/t → 0)".into(),
            )),
        }
    }

    pub fn lemma4_variant(&self) -> Theorem {
        match self.lemma4_part {
            Lemma4Part::A => Theorem::L4a,
            Lemma4Part::B => Theorem::L4b,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "dim": 3,
        "potential": {"kind": "ball_indicator", "center": [0, 0, 0], "radius": 1, "height": 1},
        "x": [0, 0, 0]
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.functional, FunctionalKind::Bridge);
        assert_eq!(c.ks, vec![1, 2]);
        assert_eq!(c.samples, 1000);
        assert_eq!(c.quad, QuadConfig::default());
        assert!(c.potential().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replacen("\"dim\"", "\"dimension\": 3, \"dim\"", 1);
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let nested = MINIMAL.replacen("\"height\": 1", "\"height\": 1, \"colour\": 2", 1);
        assert!(ExperimentConfig::from_json(&nested).is_err());
    }

    #[test]
    fn null_horizon_is_infinite_and_round_trips() {
        let text = MINIMAL.replacen("\"x\"", "\"horizons\": [10, null], \"functional\": \"free\", \"x\"", 1);
        let c = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(c.horizons().unwrap(), vec![10.0, f64::INFINITY]);
        let back = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(c.sweep_plan(Theorem::T1).is_err());
    }
}
