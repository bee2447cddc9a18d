//! Shared low-dimensional linear representation learning by alternating
//! minimization-descent, in a full-measurement form and as a federated
//! simulation with baselines.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod baselines;
pub mod error;
pub mod fedrep;
pub mod fullmeas;
pub mod harness;
pub mod linalg;
pub mod rng;
pub mod synthetic;
pub mod table;

pub use error::{Error, Result};
