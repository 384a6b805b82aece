//! Numerical core of the cartoonization workbench.
//!
//! Everything here is a pure function of its inputs and needs only `alloc`:
//! tensors and layers with analytic gradients, the generator and patch
//! discriminator, losses, single training steps, raster image operations,
//! the checkpoint codec and the ranking-survey arithmetic. File IO, the
//! training loop, the HTTP service and the CLI live in the `cartoon` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod checkpoint;
pub mod error;
pub mod gradsuite;
pub mod imageops;
pub mod losses;
pub mod models;
pub mod nn;
pub mod survey;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
