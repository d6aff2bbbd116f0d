//! Sampled-data model predictive control without terminal ingredients:
//! plant models, RK4 transcription, an augmented-Lagrangian OCP solver,
//! the receding-horizon loop, stability certificates and viability-kernel
//! geometry for constrained linear systems.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod config;
pub mod error;
pub mod experiments;
pub mod integrate;
pub mod model;
pub mod mpc;
pub mod ocp;
pub mod sampling;
pub mod viability;

pub use error::{Error, Result};
