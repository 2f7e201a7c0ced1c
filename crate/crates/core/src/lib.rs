//! k-space MR artifact simulation and feature-normalization robustness
//! benchmarks.

pub mod artifact;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fft;
pub mod io;
pub mod kspace;
pub mod metrics;
pub mod nn;
pub mod norm;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{CTensor, Complex64, Tensor};
