//! Customized-precision floating point and a deterministic all-reduce
//! simulator implementing auto-precision scaling (APS) of gradients.

pub mod accumulate;
pub mod analysis;
pub mod aps;
pub mod cli;
pub mod collectives;
pub mod softfloat;
