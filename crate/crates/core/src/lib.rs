//! Path integrals of bounded, compactly supported potentials along
//! d-dimensional Brownian bridges and free Brownian motions (d ≥ 3).
//!
//! The crate is organised around six pieces:
//!
//! * [`gaussian`]: transition densities, joint path densities, bridge
//!   marginals, the endpoint density ratio and the convexity bound.
//! * [`potential`]: bounded potentials with bounded support, their Gaussian
//!   masses and Newtonian (Green's function) potentials, and the moment
//!   generating function radius `α₀ = 1/K₁`.
//! * [`path`]: time grids, exact-in-law bridge and free motion sampling, and
//!   left-node path integrals.
//! * [`estimate`]: Monte Carlo moments, MGFs, survival probabilities and the
//!   Feynman–Kac heat kernel with standard errors.
//! * [`quadrature`]: deterministic first and second moments by nested
//!   quadrature, used as an oracle for the Monte Carlo side.
//! * [`lab`]: parameter sweeps that check the bridge-to-two-sided limit
//!   and its one-sided variant.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` guards also reject NaN

pub mod error;
pub mod estimate;
pub mod gaussian;
pub mod lab;
pub mod path;
pub mod potential;
pub mod quadrature;
pub mod rng;
mod special;
pub mod stats;

pub use error::{Error, Result};
pub use estimate::{Functional, McConfig, McEstimate, MgfCurve};
pub use path::{BridgeSpec, GridSpec, PathSample, TimeGrid};
pub use potential::{BoundsReport, Potential};
pub use quadrature::QuadConfig;

/// Minimum dimension for which the path integrals over infinite horizons
/// are almost surely finite.
pub const MIN_TRANSIENT_DIM: usize = 3;

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|p| p * p).sum()
}
