//! Neural Jump ODEs: continuous-time prediction of the conditional expectation
//! of an irregularly observed stochastic process.
//!
//! The crate is organised bottom-up:
//!
//! - [`sde`] simulates the synthetic SDE datasets, samples observation
//!   schedules and evaluates the analytic conditional expectations.
//! - [`tensor`] is a small reverse-mode differentiation engine with
//!   feed-forward networks and the Adam optimizer.
//! - [`njode`] is the model itself: jump network, Euler-integrated latent
//!   ODE and readout, including self-imputation for incomplete observations.
//! - [`objective`] holds the training loss, its masked and ergodic variants,
//!   the oracle loss and the evaluation metric.
//! - [`training`] runs the minibatch loop and the convergence study.
//! - [`run`] reads and writes run directories (config, curves, checkpoints,
//!   predictions).

pub mod error;
pub mod njode;
pub mod objective;
pub mod rng;
pub mod run;
pub mod sde;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
