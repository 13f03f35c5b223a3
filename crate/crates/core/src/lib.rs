//! Contact-aided smoothing for legged robots: Lie-group primitives, leg
//! kinematics, IMU and contact preintegration, and a batch factor-graph
//! solver, plus a walking simulator and experiment harness.

// `!(x > 0.0)` is used on purpose so NaN is rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod kinematics;
pub mod manifold;
pub mod metrics;
pub mod pipeline;
pub mod preintegration;
pub mod sim;

pub use error::{Error, Result};
