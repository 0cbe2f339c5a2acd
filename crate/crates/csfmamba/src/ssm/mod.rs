//! Selective state-space sequence modeling.
//!
//! [`kernel`] holds the shared recurrence and discretization math,
//! [`scan`] the plain (non-differentiable) sequence API with its quadratic
//! reference implementation, and [`block`] the Mamba-style encoder block
//! built on the autodiff graph.

pub mod block;
pub mod kernel;
pub mod scan;

pub use block::{
    encoder_forward, init_encoder, init_mamba_block, mamba_block_forward, SsmBlockConfig,
};
pub use scan::{scan_materialized, scan_oracle, selective_scan, ScanParams, SelectiveProj};
