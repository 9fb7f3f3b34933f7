//! Rice grain classification with a pure fully connected network.
//!
//! - [`nn`]: dense network, forward/backward passes, `GFN1` model files
//! - [`optim`]: SGD, RMSprop, Adam, Adadelta and Nadam update rules
//! - [`imageprep`]: segmentation, orientation normalization, resampling
//! - [`dataset`]: directory ingestion, stratified splits, synthetic grains
//! - [`hierarchy`]: merge-then-disambiguate two-stage classification
//! - [`metrics`]: confusion matrices, accuracy, training reports
//! - [`train`]: the seeded mini-batch training loop

pub mod dataset;
pub mod error;
pub mod hierarchy;
pub mod imageprep;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod train;

pub use error::{Error, Result};

/// Mixes a stream index into a base seed (splitmix64 finalizer), so
/// related runs get decorrelated RNG streams.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
