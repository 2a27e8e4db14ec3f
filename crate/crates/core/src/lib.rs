//! Maximum-likelihood estimation of the coupling parameter in a nonlinear
//! two-qubit mixing model.
//!
//! - [`mixing`]: forward model, analytic inversion, per-sample derivatives
//! - [`priors`]: source densities, samplers, score functions
//! - [`likelihood`]: log-likelihood and its total (and partial-only) derivative
//! - [`estimator`]: bracketing search for the maximizing coupling
//! - [`datagen`]: seeded synthetic experiments
//! - [`validation`]: finite-difference and quadrature oracles, gradient audit
//! - [`io`]: configuration and file formats used by the CLI

// `!(a < b)` guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod estimator;
pub mod io;
pub mod likelihood;
pub mod mixing;
pub mod priors;
pub mod validation;

pub use estimator::{estimate_v, scan, EstimateError, EstimateResult, MaximumKind, SearchOptions};
pub use likelihood::{GradientVariant, SampleMeta, SampleSet};
pub use mixing::{MixingParam, ObservationVector, SourceVector, Tolerances};
pub use priors::PriorConfig;
