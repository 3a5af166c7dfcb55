//! Epistemic participatory budgeting laboratory.
//!
//! Agents receive independent noisy binary signals about the latent quality of
//! each alternative and vote informatively (ballot = signal vector). The crate
//! provides:
//!
//! * [`model`]: environments, quality/signal sampling, utilities and the
//!   experimental instance generator.
//! * [`rules`]: eight budgeted approval rules (AV, AV/cost, PAV, Greedy Cover,
//!   Phragmén, MES, MES+AV, MES+Phragmén) with one deterministic tie-break.
//! * [`oracles`]: exact references (optimal winning sets, binomial tie and
//!   pivotal probabilities, grid minimisation of the rate function, exact
//!   deviation gains at tiny `n`).
//! * [`performance`]: Monte Carlo performance estimation, sweeps and the
//!   paired t-test.
//! * [`strategic`]: saddlepoint tie approximation, pivotal-pair enumeration,
//!   the large-deviation rate function and its exact minimiser, and the
//!   rarity simulation of the BNE necessary condition.
//!
//! Data-parallel loops go through [`par`]; with the `parallel` feature off
//! everything runs sequentially and produces identical results.

pub mod binom;
pub mod error;
pub mod model;
pub mod oracles;
pub mod par;
pub mod performance;
pub mod rng;
pub mod rules;
pub mod strategic;

pub use error::{Error, Result};
pub use model::{
    Environment, InformationStructure, QualityVector, SignalProfile, UtilityKind, WinningSet,
};
pub use par::Execution;
pub use rules::{RuleId, TieBreak};

/// Slack used for every budget / payment comparison on real-valued costs.
pub const COST_EPSILON: f64 = 1e-9;
