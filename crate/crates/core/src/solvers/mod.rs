//! Update rules and the run loop.

mod config;
mod run;
mod sigma;
mod steps;

pub use config::{theorem_eta, Algorithm, GradientForm, MixtureGamma, SolverRunConfig};
pub use run::{run_solver, Stepper, DIVERGENCE_LIMIT, ESTIMATOR_STREAM};
pub use sigma::{SigmaKind, SigmaOperator};
pub use steps::*;

pub(crate) use sigma::apply_product;
pub(crate) use steps::{ipo_residual, uniform_ipo_gradient};
