//! Compressed dictionary learning: iterative (compressed) thresholding and
//! K residual means, fast Johnson-Lindenstrauss embeddings built on FFT-able
//! transforms, a synthetic sparse-signal generator, recovery metrics and
//! theory-bound calculators, plus an experiment harness with a CLI.

pub mod error;
pub mod eval;
pub mod harness;
pub mod jl;
pub mod learner;
pub mod signal;
pub mod transforms;

pub use error::{Error, Result};
