//! Seed derivation. Every random stream in the crate is a pure function of
//! one master seed, a stream tag and an index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const STREAM_BACKBONE: u64 = 1;
pub(crate) const STREAM_TREE: u64 = 2;
pub(crate) const STREAM_BATCH: u64 = 3;
pub(crate) const STREAM_SYNTH: u64 = 4;
pub(crate) const STREAM_HEAD: u64 = 5;

/// SplitMix64 finalizer over `(master, stream, index)`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng(master: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, index))
}
