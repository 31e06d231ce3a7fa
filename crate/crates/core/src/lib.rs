//! Region-based active learning for semantic segmentation.

pub mod error;
pub mod formats;
pub mod acquisition;
pub mod alloop;
pub mod gridmaps;
pub mod metaseg;
pub mod cli;
pub mod clickcost;
pub mod segmentation;
pub mod synth;

pub use error::{Error, Result};

/// Mixes a master seed with a sequence of indices (iteration, image, ...)
/// into an independent 64-bit seed using the SplitMix64 finalizer.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}
