//! Joint classification of hyperspectral and LiDAR pixels with a
//! cross-state-fusion Mamba network.
//!
//! The crate builds everything from the ground up on a small tape-based
//! autodiff engine: selective state-space scans, Mamba-style blocks, a
//! two-branch encoder whose modalities exchange CLS tokens and generate each
//! other's scan parameters, plus the data preprocessing, training, and
//! evaluation pipeline around it.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod fusion;
pub mod net;
pub mod pipeline;
pub mod ssm;

pub use error::{Error, Result};
