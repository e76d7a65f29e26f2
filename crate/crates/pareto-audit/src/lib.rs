//! Loss-fairness trade-off toolkit: synthetic data generation, scalarized
//! MLP training sweeps, empirical Pareto frontier extraction, a closed-form
//! frontier family with fitting and extrapolation, audit distances, and
//! numerical checks of the identities the frontier family relies on.

pub mod artifact;
pub mod audit;
pub mod closed_form;
pub mod dgp;
pub mod error;
pub mod fitting;
pub mod frontier;
pub mod metrics;
pub mod nn;
pub mod theory;
pub mod training;

pub use error::{Error, Result};
