// Validation code deliberately writes `!(x > 0.0)` instead of `x <= 0.0`
// so that NaN inputs fail the check along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! High-dimensional error prediction for Wasserstein-robust linear regression.
//!
//! This crate predicts the exact limiting estimation error of linear
//! M-estimators that hedge against distribution shift, and validates the
//! predictions on synthetic data. Three estimator families are covered:
//!
//! * **W1**: order-1 Wasserstein distributionally robust regression with a
//!   Lipschitz loss, whose robust objective reduces to a norm-penalized
//!   empirical loss;
//! * **W2_DRO** / **W2_DRO_Squared**: order-2 Wasserstein robust regression
//!   with a smooth loss (or the squared loss, which admits a dedicated
//!   square-root-lasso form);
//! * **DRE** / **DRE_Squared**: distributionally *regularized* regression,
//!   where the worst-case shift enters as an additive penalty rather than a
//!   constraint.
//!
//! In the proportional regime `d/n -> rho` with isotropic Gaussian designs,
//! the normalized squared error `||theta_hat - theta_0||^2 / d` of each
//! estimator concentrates on a deterministic constant `alpha_star^2`. The
//! constant is characterized as the optimizer of a low-dimensional
//! convex-concave minimax problem built from expected Moreau envelopes of the
//! loss. The crate is organized bottom-up along that reduction:
//!
//! * [`loss_models`] -- losses, conjugates, closed-form Moreau envelopes;
//! * [`noise_models`] -- noise laws and Gaussian product expectations;
//! * [`scalarization`] -- the scalar minimax objectives and their expected
//!   envelope building blocks;
//! * [`saddle_solver`] -- derivative-free nested solvers for the minimax
//!   problems, returning [`saddle_solver::Prediction`] values with
//!   optimality certificates;
//! * [`finite_sample`] -- finite-dimensional solvers for the actual robust
//!   estimation problems on a given dataset;
//! * [`montecarlo`] -- seeded experiment harness comparing predictions
//!   against Monte Carlo replications.
//!
//! All randomness flows through explicitly seeded ChaCha streams; repeated
//! runs with the same configuration are bit-identical.

pub mod finite_sample;
pub mod loss_models;
pub mod montecarlo;
pub mod noise_models;
pub mod saddle_solver;
pub mod scalarization;

mod search;

pub use loss_models::{LossConstants, LossError, LossModel};
pub use montecarlo::{
    generate_instance, run_experiment, trial_seed, DimSummary, ExperimentError, ExperimentSpec,
    ExperimentSummary, Theta0Style, TrialRecord,
};
pub use noise_models::{IntegrationMode, NoiseError, NoiseModel, QuadratureConfig};
pub use saddle_solver::{
    solve, Bracket, Branch, Prediction, PredictionFlag, SaddleError, SearchOptions,
    StationarityReport, Witness,
};
pub use scalarization::{Mode, ProblemSpec, ScalarizationError};
