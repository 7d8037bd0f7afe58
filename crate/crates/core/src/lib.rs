//! Functional principal component analysis for heavy-tailed curves.
//!
//! * [`func_core`]: grids, curves and Hilbert–Schmidt operators.
//! * [`fpca`]: sample covariance operators, eigenstructure, scores.
//! * [`heavytail_sim`]: regularly varying curve generators and normalizers.
//! * [`tail_diag`]: Hill estimation and score tail diagnostics.
//! * [`rate_harness`]: Monte Carlo convergence-rate experiments.
//! * [`flr`]: functional linear regression with truncated FPC expansions.
//! * [`io`]: CSV and JSON formats.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod flr;
pub mod fpca;
pub mod func_core;
pub mod heavytail_sim;
pub mod io;
pub mod rate_harness;
pub mod tail_diag;

pub use error::{Error, Result};
pub use func_core::{Curve, CurveSample, Grid, HsOperator};
