//! File formats, training loop, survey service and command line for the
//! cartoonization workbench, on top of `cartoon-core`.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod io;
pub mod stylize;
pub mod survey;
pub mod trainer;

pub use error::{Error, Result};
