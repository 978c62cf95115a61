//! Super-resolution, registration and evaluation toolkit for grayscale
//! planetary imagery.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod descmatch;
pub mod error;
pub mod features;
pub mod geo;
pub mod imgcore;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod registration;
pub mod synthbench;

pub use error::{Error, Result};
pub use imgcore::{Image, InterpMethod, Mask};
