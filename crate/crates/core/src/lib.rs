//! Inference and analysis engine for a Conformer-based neural vocoder with
//! blockwise ring attention and an inverse-STFT synthesis head.
//!
//! The crate is organized bottom-up: [`ops`] holds dense kernels, [`dsp`]
//! the STFT/iSTFT and mel analysis, [`attention`] the ring-attention
//! executor with its vanilla oracle, [`conformer`] and [`generator`] the
//! model, [`adversarial`] the loss evaluators and multi-period discriminator,
//! and [`metrics`] the objective speech metrics. [`io`] implements the file
//! formats used by the `ringformer` binary.

pub mod adversarial;
pub mod attention;
pub mod conformer;
pub mod dsp;
pub mod error;
pub mod generator;
pub mod init;
pub mod io;
pub mod metrics;
pub mod ops;
pub mod parallel;
pub mod selftest;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
