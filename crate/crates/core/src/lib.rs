//! Local elasticity (`S_rel`) of gradient-based training.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::too_many_arguments)]

pub mod data;
pub mod elasticity;
pub mod error;
pub mod flows;
pub mod io;
pub mod linalg;
pub mod mlp;
pub mod sgd;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use linalg::{Matrix, Vector};
