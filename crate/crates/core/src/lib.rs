//! Segmented pinching-antenna ISAC design stack: a differentiable physics
//! environment (near-field channels, sum rate, position CRLB), a
//! graph-conditioned sequence model with low-rank adapters that jointly
//! predicts antenna deployment, segment Tx/Rx partition, and beamforming, and
//! a beam-head-only transfer harness for changed user counts.

pub mod data;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod model;
pub mod physics;
pub mod sensing;
pub mod tape;
pub mod train;

pub use error::{Result, SwanError};
