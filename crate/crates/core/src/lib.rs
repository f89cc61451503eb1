//! Unified streaming / non-streaming Conformer encoder kernels.
//!
//! The crate pairs chunk-masked self-attention with dynamic chunk convolution
//! so that a single set of weights can run offline over a whole utterance or
//! chunk by chunk with cached state, and the two paths provably agree.

pub mod conv;
pub mod ctc;
pub mod encoder;
pub mod error;
pub mod features;
pub mod masking;
pub mod rng;
pub mod scalar;
pub mod streaming;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar};
pub use tensor::Matrix;
