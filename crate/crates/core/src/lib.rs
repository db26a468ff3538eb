//! Patch-based point cloud engine with implicit level of detail.
//!
//! Points are grouped in grid patches. Each patch is reordered with MidOc so
//! that any prefix of its points is a coarse-to-fine approximation, and the
//! per-level pick counts (`ppl`) double as a dimensionality descriptor used
//! for density correction and patch classification.

#[cfg(feature = "server")]
pub mod cli;
pub mod classify;
pub mod descriptor;
pub mod error;
pub mod intralevel;
pub mod midoc;
pub mod quant;
pub mod service;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
