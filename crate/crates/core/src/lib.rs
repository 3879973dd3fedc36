//! Unified SQP / iterative LPV-MPC solver for nonlinear model predictive control.

pub mod ad;
pub mod engine;
pub mod error;
pub mod harness;
pub mod model;
pub mod mpcc;
pub mod ocp;
pub mod qp;
pub mod selftest;
pub mod sensitivity;
pub mod trajectory;

pub use error::{Error, Result};
