//! Simulation and control of a regulated lake.
//!
//! * [`hydrology`]: hourly mass balance with release saturation.
//! * [`qp`]: dense convex QP solver with KKT certification.
//! * [`mpc`]: receding-horizon controller (hourly) and its daily open-loop variant.
//! * [`ddp`]: deterministic dynamic programming benchmark.
//! * [`scenario`]: synthetic and file-based inflow/demand scenarios.
//! * [`metrics`]: objective metrics and experiment drivers.
//! * [`config`], [`report`]: TOML run configuration and CSV/text output.

// `!(x > 0.0)` is the NaN-rejecting check throughout; index loops are numeric kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod ddp;
pub mod error;
pub mod hydrology;
pub mod metrics;
pub mod mpc;
pub mod qp;
pub mod report;
pub mod scenario;
pub mod trace;

pub use error::{Error, Result};
pub use trace::ClosedLoopTrace;
