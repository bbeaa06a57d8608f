//! Simultaneous-testing engine built around per-test size functions.
//!
//! A battery of M hypothesis tests is run jointly by giving each test its own
//! size function A_m — the per-test rejection size as a function of a shared
//! level knob alpha — and then choosing the knob data-dependently. Two
//! selection rules are provided:
//!
//! * a step-down rule that keeps the probability of any false rejection
//!   under the budget `q` ([`procedures::Procedure::Dagger`]), and
//! * a step-up rule that keeps the expected false-discovery proportion under
//!   `q` ([`procedures::Procedure::Star`]), valid when the family also
//!   balances its null block.
//!
//! With the reciprocal-exponent family both rules collapse to their familiar
//! textbook forms (step-down exponent thresholds, linear step-up), which the
//! crate ships as cross-checks. Unequal families buy power where it matters:
//! [`optsize`] computes the allocation that maximizes expected detections
//! against known effect sizes, and [`simlab`] certifies any configuration by
//! simulation with deterministic, stream-indexed randomness.
//!
//! Modules:
//! * [`sizefam`] — size-function families, their structural conditions, and
//!   the validator that checks them.
//! * [`pvalues`] — test batteries, per-test level transforms, anti-ranks.
//! * [`procedures`] — the two selection rules, their closed-form reference
//!   counterparts, and the level-crossing solvers.
//! * [`errmetrics`] — false/missed rejection tallies and rate estimates.
//! * [`simlab`] — seeded Monte Carlo harness with error-rate certification.
//! * [`optsize`] — power-optimal exponent allocation and family assembly.
//! * [`normal`] — standard normal CDF/quantile primitives used throughout.

pub mod errmetrics;
pub mod error;
pub mod normal;
pub mod optsize;
pub mod procedures;
pub mod pvalues;
pub mod simlab;
pub mod sizefam;

pub use errmetrics::{count_errors, estimate_rates, ErrorCounts, GroundTruth, RateEstimates};
pub use error::{Error, Result};
pub use optsize::{build_optimal_family, optimize_weights_at_alpha, RocModel, WeightSolution};
pub use procedures::{run_procedure, Procedure, ProcedureOutcome};
pub use pvalues::{generalized_pvalues, GeneralizedPValues, TestBattery, TestRecord};
pub use simlab::{run_experiment, run_experiment_with_counts, SimConfig, SimResult};
pub use sizefam::{validate_family, FamilySpec, SizeFamily, SizeFunction, ValidationReport};
