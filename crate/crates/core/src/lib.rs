//! Independent subnetwork training on distributed quadratics: sketch
//! operators, the simplified training iteration, and the quantities that
//! certify its convergence.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod problem;
pub mod rng;
pub mod runner;
pub mod sketch;
pub mod theory;

pub use error::{Error, Result};
pub use linalg::Vector;
