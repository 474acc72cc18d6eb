//! Constrained subgroup identification for treatment-effect maximization.
//!
//! This crate finds the subgroup of a population with the largest estimated
//! average treatment effect subject to operational constraints (minimum group
//! size, propensity overlap, safety caps, budget limits, fairness ratios).
//! The subgroup is represented by a differentiable scoring model and fitted
//! by damped gradient descent-ascent on a regularized Lagrangian of the
//! constrained problem.
//!
//! Module map:
//! - [`data`]: datasets, CSV I/O, splitting utilities
//! - [`synth`]: synthetic benchmark data generator
//! - [`nuisance`]: propensity and outcome nuisance models
//! - [`pseudo`]: per-sample pseudo-outcomes for the treatment effect
//! - [`surrogate`]: differentiable subgroup scoring models
//! - [`constraints`]: constraint specifications and residual evaluation
//! - [`gda`]: the descent-ascent optimizer
//! - [`eval`]: subgroup metrics, error studies, model selection
//! - [`pipeline`]: end-to-end fit/evaluate composition

pub mod constraints;
pub mod data;
pub mod error;
pub mod eval;
pub mod gda;
pub mod matrix;
pub mod nn;
pub mod nuisance;
pub mod pipeline;
pub mod pseudo;
pub mod seeding;
pub mod surrogate;
pub mod synth;

pub use error::{Error, Result};
