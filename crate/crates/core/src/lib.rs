//! Multi-objective robust optimization of quantiles for problems with mixed
//! continuous and categorical variables.
//!
//! The objectives are Monte Carlo quantiles of model costs under input
//! uncertainty. Common random numbers turn the quantile map into a
//! deterministic function of the design, which NSGA-II then optimizes. The
//! expensive model is replaced by Kriging surrogates built in the augmented
//! design-plus-random space and enriched where the Pareto front is inaccurate.

pub mod error;
pub mod kriging;
pub mod metrics;
pub mod moga;
pub mod adaptive;
pub mod bench;
pub mod cluster;
pub mod problem;
pub mod sampling;

pub use error::{Error, Result};
pub use problem::{MixedPoint, ObjectiveModel, ProblemSpec};
