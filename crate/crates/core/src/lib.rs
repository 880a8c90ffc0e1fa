//! Finite-sample permutation tests for partial association in linear
//! models, robust to heavy tails and skew, plus a simulation harness for
//! type-I error and power studies.

pub mod baselines;
pub mod cli;
pub mod distributions;
pub mod framework;
pub mod linalg;
pub mod regressors;
pub mod rng;
pub mod simulation;
pub mod theory_checks;
