//! Deterministic sub-seed derivation.
//!
//! Every stochastic stream is keyed by `(root seed, label, stream index)` so
//! that a run's randomness does not depend on how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used by every search and study.
pub type SearchRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with a label and a stream index (FNV-1a over the label,
/// then splitmix64 finalization).
pub fn derive_seed(root: u64, label: &str, stream: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(root ^ h).wrapping_add(stream))
}

pub fn rng_for(root: u64, label: &str, stream: u64) -> SearchRng {
    SearchRng::seed_from_u64(derive_seed(root, label, stream))
}
