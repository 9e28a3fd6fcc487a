//! Compression toolkit for INT8 neural-network weights.
//!
//! The pipeline scales weights per input channel by calibration activation
//! maxima, quantizes them to symmetric INT8, optionally prunes low-scoring
//! weights, and packs the result into a chunked container coded with rANS.
//! A latency model then decides how much of the model to keep compressed so
//! decompression does not dominate inference time.

pub mod cli;
pub mod codec;
pub mod dcwt;
pub mod latency;
pub mod error;
pub mod prune;
pub mod quant;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
