//! Ensemble prediction-uncertainty scoring and false-negative triage.
//!
//! Given an N x K matrix of per-example member predictions from any
//! ensemble (explicit ensembles, MC-dropout or test-time-augmentation
//! sample sets alike), this crate
//!
//! - validates and round-trips the prediction data ([`data`]),
//! - computes per-example uncertainty scores under the margin, entropy,
//!   variance and KL metrics ([`metrics`]),
//! - ranks negative predictions, selects the top-q% uncertain ones and
//!   evaluates false-negative precision, severity breakdowns and
//!   remaining-false-negative accounting ([`triage`]),
//! - and verifies the beta-model ordering and misranking bounds behind
//!   the margin-vs-variance comparison, both analytically and by seeded
//!   Monte Carlo ([`beta`]).
//!
//! All numeric code is generic over the scalar type via [`Real`]; the
//! aliases below fix `f64`, which is what the CLI and the file formats
//! use.

// Parameter validation uses negated comparisons (`!(x > 0)`) on purpose:
// unlike `x <= 0`, they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beta;
pub mod data;
pub mod error;
pub mod metrics;
pub mod scalar;
pub mod triage;

pub use error::{Error, Result};
pub use scalar::Real;

/// `f64` dataset as produced by the CSV loader.
pub type Dataset = data::EnsembleDataset<f64>;
/// `f64` prediction record.
pub type Record = data::PredictionRecord<f64>;
/// `f64` decision configuration (threshold and clamp epsilon).
pub type Decision = data::DecisionConfig<f64>;
/// `f64` per-example score report.
pub type Report = metrics::UncertaintyReport<f64>;
/// `f64` closed-form pairwise theory values.
pub type Theory = beta::PairwiseTheory<f64>;
