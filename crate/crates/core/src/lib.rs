//! Sub-Riemannian geometry in a single coordinate chart: normal geodesics,
//! boundary-value problems, endpoint maps and abnormality, arclength
//! reparameterization and calibration-based minimality checks.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod endpoint;
pub mod error;
pub mod flow;
pub mod linalg;
pub mod minimality;
pub mod model;
pub mod ode;
pub mod reparam;
pub mod solver;
