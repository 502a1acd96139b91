//! Active listwise-tournament ranking.
//!
//! A pool of candidates is ranked from a sequence of small listwise
//! judgments: each iteration picks K candidates, a judge orders them, and a
//! Plackett-Luce model fitted to every ordering so far yields global
//! utilities with diagonal Laplace variances. The variances drive the choice
//! of the next subset.
//!
//! - [`model`]: pools, observations, configuration.
//! - [`pl`]: likelihood, gradient, fitting, Laplace variances, sampling.
//! - [`judge`]: the judge contract, simulators and the wire protocol.
//! - [`acquisition`]: subset-selection strategies.
//! - [`tournament`]: the run loop, replay and stopping.
//! - [`metrics`]: Kendall-tau, NDCG, utility movement and friends.

pub mod acquisition;
pub mod cli;
pub mod error;
pub mod judge;
pub mod metrics;
pub mod model;
pub mod pl;
pub mod report;
pub mod rng;
pub mod rundir;
pub mod synth;
pub mod tournament;

pub use error::{Error, Result};
pub use model::{Candidate, CandidatePool, RankingObservation, Strategy, TournamentConfig, UtilityState};
