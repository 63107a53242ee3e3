//! Energy-aware topology control for cellular downlink networks.
//!
//! The crate generates synthetic multi-cell scenarios, evaluates the
//! load/energy model of a network configuration, and searches for
//! configurations that switch off redundant cells while every test point
//! keeps its rate requirement. The central solver is a reweighted-log
//! majorization-minimization loop whose inner step is a linear program
//! over the relaxed assignment polytope; exact and greedy baselines are
//! available for validation on small instances.

pub mod discretize;
pub mod energy;
pub mod error;
pub mod linkmodel;
pub mod loadaware;
pub mod lpsolver;
pub mod optimizer;
pub mod scenario;

pub use error::{Error, Result};

/// Dense `cells x test points` matrix; row `i` is cell `i`, column `j` is TP `j`.
pub type Grid = ndarray::Array2<f64>;
