//! Core algorithms for handwritten word recognition in the block-DCT
//! compressed domain: a minimal tape-based autodiff tensor engine, the
//! HWRCNet CNN-BiLSTM model, CTC loss and decoding, block-DCT codec,
//! image preprocessing, and sequence metrics.
//!
//! The crate is `no_std` (with `alloc`); all IO, file formats, and the
//! CLI live in the companion `hwrc` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod adam;
pub mod ctc;
pub mod dct;
pub mod metrics;
pub mod network;
pub mod preprocess;
pub mod tape;
pub mod tensor;
pub mod vocab;

pub use tensor::{Scalar, Tensor, TensorError};
