//! Penalized EM identification of reduced-rank linear dynamical systems.
//!
//! The estimator fits `x_{t+1} = A x_t + w_t`, `y_t = C x_t + v_t` to a
//! high-dimensional series `Y` with an l1 penalty on the transition matrix
//! and an l2 penalty on the observation matrix, alternating a Kalman
//! filter/smoother E-step with closed-form and proximal M-step updates.
//! Diagonal observation noise plus the Woodbury identity keep every solve
//! `d x d`, so ambient dimensions in the tens of thousands are routine.
//!
//! Modules:
//! - [`model`]: parameter types, constraint validation, penalized objective.
//! - [`sim`]: seeded ground-truth generation and series simulation.
//! - [`kalman`]: E-step forward filter and backward smoother.
//! - [`proximal`]: FISTA solver for the l1-penalized transition update.
//! - [`em`]: initialization, M-step updates and the full fit loop.
//! - [`metrics`]: permutation/scale-invariant parameter distances, scores.
//! - [`selection`]: latent-dimension and penalty selection.
//! - [`forecast`]: k-step prediction and forecast covariances.

pub mod em;
pub mod error;
pub mod forecast;
pub mod kalman;
pub mod metrics;
pub mod model;
pub mod proximal;
pub mod selection;
pub mod sim;

pub use em::{fit, fit_with_options, FitOptions, FitReport};
pub use error::{Error, Result};
pub use model::{Hyperparams, LatentSeries, LdsParams, ObservationSeries};
