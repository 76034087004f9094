//! Learnable companding quantization for low-bit neural networks.
//!
//! The crate covers the full pipeline:
//!
//! * [`quant`]: uniform and companding quantizers, their level sets, and a
//!   text record format for trained quantizers.
//! * [`grad`]: straight-through gradients with respect to the companding
//!   parameters, the clip value and the input.
//! * [`lwn`]: limited weight normalization in front of the weight quantizer.
//! * [`nn`]: a small CPU tensor engine with quantized conv/linear layers.
//! * [`lut`]: integer look-up-table inference for trained networks.
//! * [`train`], [`data`]: training loop, schedules and dataset readers.
//! * [`verify`]: finite-difference gradient checks and independent references.
//! * [`cli`]: the `lcq` command-line front end.

pub mod cli;
pub mod data;
pub mod error;
pub mod grad;
pub mod lut;
pub mod lwn;
pub mod nn;
pub mod quant;
pub mod real;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use real::Real;
