//! Desired-approximation adaptive neural control for SISO plants
//! `g(x) x_n' = f(x) + u`: reference and error geometry, RBF networks,
//! the three control/adaptation schemes, an RK4 closed loop, and numerical
//! checks of the stability bounds against simulated traces.

// `!(x > 0.0)` is used on purpose so NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod controllers;
pub mod error;
pub mod error_geometry;
pub mod plant;
pub mod rbf;
pub mod scenario;
pub mod sim;
pub mod trajectory;

pub use error::{Error, Result};
