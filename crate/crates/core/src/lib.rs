//! Backward heat conduction: forward model, point observations, Tikhonov
//! inversion and self-adaptive regularization.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adapt;
pub mod analysis;
pub mod config;
pub mod error;
pub mod experiments;
pub mod forward;
pub mod grid;
pub mod linalg;
pub mod observe;
pub mod operators;
pub mod presets;
pub mod tikhonov;

pub use error::{Error, Result};
