//! Speech enhancement with Taylor-linearised attention and locally refined
//! convolutions, on an f64 tensor core.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod attention;
pub mod cli;
pub mod config;
pub mod error;
pub mod local_refine;
pub mod network;
pub mod nn;
pub mod objectives;
pub mod signal;
pub mod verify;
pub mod weights;

pub use config::ModelConfig;
pub use error::{Error, Result};
