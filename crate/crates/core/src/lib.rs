//! Bayesian preference elicitation for multi-objective decision support.
//!
//! A Gaussian-process model of a decision-maker's utility is learned from
//! pairwise comparisons; queries are chosen by maximizing the expected utility
//! of the best option, and the session ends with a small menu of solutions.

pub mod acquisition;
pub mod dm;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod menu;
pub mod model;
pub mod pareto;
pub mod problems;
pub mod seed;
pub mod sobol;

#[cfg(test)]
pub(crate) mod testing;

pub use error::{Error, Result};
