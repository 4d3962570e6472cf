//! Text-line recognition from Gaussian image pyramids.
//!
//! The pipeline runs in stages:
//!
//! 1. [`raster`] loads PGM/PPM/PNG images into floating point planes and
//!    handles grayscale conversion and bilinear resampling.
//! 2. [`pyramid`] builds a Gaussian (binomial 5-tap) reduction pyramid.
//! 3. [`filter_bank`] runs six fixed kernels over every level and serializes
//!    the filtered planes into right-to-left column frames.
//! 4. [`seqmodel`] holds the recurrent recognizer (bidirectional LSTM or a
//!    four-direction MDLSTM) trained with CTC.
//! 5. [`dataset`] and [`eval`] supply manifests, splits, a synthetic corpus
//!    generator, and the edit-distance based metrics and reports.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod filter_bank;
pub mod pyramid;
pub mod raster;
pub mod seqmodel;

pub use error::{Error, Result};
