//! COUPA: continuous-time, position-aware click-through-rate prediction.
//!
//! The crate is organised bottom-up: [`nn`] is a small reverse-mode autodiff
//! core, [`time_encoding`], [`attention`], [`point_process`] and [`position`]
//! are the model's building blocks, [`model`] composes and trains them,
//! [`data`] produces and loads logs, and [`serving`] simulates the two-stage
//! online protocol.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod point_process;
pub mod position;
pub mod serving;
pub mod time_encoding;

pub use error::{Error, Result};
pub use model::{Coupa, ModelConfig, TrainConfig};
