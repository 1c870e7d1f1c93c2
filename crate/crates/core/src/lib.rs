//! Stable conformal prediction (StCP) primitives.
//!
//! This crate is `no_std` (it needs `alloc`) and carries every numerical piece
//! of the method: score functions, empirical and model-based score CDFs, the
//! finite-grid Wasserstein alignment of a source-trained conditional score
//! model, data-driven selection of the regularization weight, and the
//! synthetic transfer-learning harness used to check coverage and set
//! stability. File formats, parallel orchestration and the command line live
//! in the companion `stcp` crate.
//!
//! The pipeline for one calibration problem is:
//!
//! 1. fit a point predictor and a conditional score model on source data,
//! 2. score the labeled target calibration sample,
//! 3. align the conditional model so its transductive marginal (averaged over
//!    unlabeled target covariates) matches the empirical score distribution,
//!    penalized towards the source fit,
//! 4. take the `1 - alpha_n` quantile of the aligned marginal as threshold.

#![no_std]

extern crate alloc;

pub mod align;
pub mod calib;
pub mod data;
mod error;
pub mod isotonic;
mod linalg;
pub mod math;
pub mod predictors;
pub mod scores;
pub mod simlab;

pub use error::{Error, Result};
