//! Pairwise relational face embeddings at desk scale.
//!
//! The crate is a library first: each major capability has a runnable
//! example under `examples/`, and a thin `prn` binary wraps the dataset,
//! alignment, training, and evaluation entry points.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod relation;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
