//! Attention-weighted spatial covariance estimation and mask-based
//! beamforming for small microphone arrays.

pub mod attention;
pub mod beamformer;
pub mod dsp;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod masks;
pub mod metrics;
pub mod pipeline;
pub mod room;
pub mod scm;

pub use error::{Error, Result};
