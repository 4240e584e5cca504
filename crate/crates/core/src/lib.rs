//! Multi-head multi-loss calibration lab.
//!
//! - [`nn`]: dense MLP engine with manual backprop and momentum SGD.
//! - [`mhml`]: multi-head classifier, complementary weight schemes, the
//!   multi-head loss and its analytic logit gradients.
//! - [`gradcheck`]: finite-difference oracle and gradient-property harnesses.
//! - [`metrics`]: accuracy, ECE, NLL, Brier, reliability tables, rank aggregation.
//! - [`posthoc`]: temperature scaling, including the logit-average variant.
//! - [`bench`]: Gaussian-mixture benchmark, baseline trainers and the suite runner.

pub mod bench;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod mhml;
pub mod nn;
pub mod posthoc;

pub use error::{Error, Result};
