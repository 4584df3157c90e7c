//! Seeded, portable random streams.
//!
//! Every generator is ChaCha20 (a 64-bit-counter, block-based generator)
//! keyed from a user seed with `SeedableRng::seed_from_u64`. Independent
//! substreams are selected with ChaCha's 64-bit stream id, so draws depend
//! only on `(seed, stream)` and never on thread scheduling or platform.
//!
//! Stream assignment:
//! - `0` ground-truth basis construction,
//! - `1` FastICA initial unmixing,
//! - [`trajectory_stream`] for synthetic trajectory `index` of a batch.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub const BASIS_STREAM: u64 = 0;
pub const ICA_INIT_STREAM: u64 = 1;

pub fn stream(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// FNV-1a over the bit patterns of `tag`; identifies a batch of trajectories.
pub fn batch_tag(tag: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in tag {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Stream id of trajectory `index` within the batch identified by `tag`.
/// The low two ids are reserved for the fixed streams above.
pub fn trajectory_stream(tag: u64, index: u64) -> u64 {
    let mixed = tag ^ (index.wrapping_add(1)).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    mixed.max(2)
}
