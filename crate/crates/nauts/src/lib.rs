//! Online negotiation of navigational policies.
//!
//! A robot carries a small portfolio of fixed navigation policies.
//! For each, a lightweight probabilistic regressor predicts the
//! behaviors the policy would command over a short horizon; the
//! predictions are scored by a regret functional against the current
//! goal, and a constrained least-squares negotiation blends the
//! policies into a single executed behavior, re-weighting online as
//! terrain and sensing change.
//!
//! Crate layout:
//! - [`core`]: shared geometric types and kinematics.
//! - [`policies`]: the five hand-designed navigation policies.
//! - [`predictor`]: random-feature Gaussian regressor plus its
//!   zeroth-order trainer.
//! - [`negotiation`]: regret scoring and the iterative closed-form
//!   weight solver.
//! - [`simulator`]: 2-D terrain worlds, episode runner, metrics.
//! - [`commands`]: implementations behind the command-line interface.

pub mod commands;
pub mod core;
pub mod error;
pub mod negotiation;
pub mod parallel;
pub mod policies;
pub mod predictor;
pub mod simulator;

pub use error::{Error, Result};
