//! Regularized preference games: equilibrium oracles, EGPO and its
//! baselines, stochastic estimators, a small neural policy and an
//! experiment harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod game;
pub mod harness;
pub mod neural;
pub mod qre;
pub mod record;
pub mod solvers;
pub mod stochastic;

pub use error::{Error, Result};
pub use game::{
    best_response_regularized, dual_gap, dual_gap_regularized, generate_preference_matrix, kl,
    log_sum_exp, policy_probs, regularized_value, value, BestResponse, GameSpec, PreferenceMatrix,
    Side, TabularPolicy,
};
pub use neural::{mlp_init, neural_step, run_neural, MlpPolicy, ParamSnapshot};
pub use qre::{
    fixed_point_residual, mixture_fixed_point, mixture_fixed_point_residual, qre_solve,
    qre_solve_from, EquilibriumCertificate,
};
pub use record::{MetricRow, RunRecord, RunStatus};
pub use solvers::{run_solver, Algorithm, GradientForm, MixtureGamma, SolverRunConfig};
pub use stochastic::{EstimatorMode, RngStream, VectorEstimator};
