//! Homoglyph domain detection: dataset generation, rendering, and an
//! attention-augmented CNN classifier over rendered domain images.

pub mod cbam;
pub mod config;
pub mod corpus;
pub mod error;
pub mod glyphs;
pub mod metrics;
pub mod model;
pub mod render;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Stable fan-out of one global seed into independent per-stage streams:
/// the first eight little-endian bytes of sha256(seed_le || tag).
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Training/inference precision.
pub type Tensor32 = Tensor<f32>;
/// Gradient-verification precision.
pub type Tensor64 = Tensor<f64>;
