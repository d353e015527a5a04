//! Statistical inference for temporal difference learning with linear
//! function approximation: Polyak-Ruppert averaged TD(0), an online plug-in
//! covariance estimator, confidence regions, and Monte Carlo experiments.

pub mod covest;
pub mod error;
pub mod harness;
pub mod inference;
pub mod mdp;
pub mod metrics;
pub mod numkit;
pub mod td;

pub use error::{Error, Result};
