//! Four-way speed-control action forecasting from per-frame object
//! detections: per-category object relation graphs filtered with K-hop
//! Chebyshev convolutions, per-category LSTMs, and a softmax classifier,
//! plus the data preparation, training, evaluation and synthetic-scene
//! tooling around them.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
