//! Deterministic random-stream derivation.
//!
//! Every random decision in the simulator draws from its own named stream so
//! that independent concerns (data synthesis, partitioning, weight init,
//! client sampling, minibatch shuffling, harmonization order) never share
//! state. A stream is identified by a list of `u64` parts, typically
//! `[experiment_seed, STREAM_TAG, round, client]`; the parts are mixed with a
//! splitmix64 chain into a 256-bit ChaCha seed. Consequences:
//!
//! - the same experiment seed always reproduces the same run, and
//! - consuming more or fewer values from one stream (e.g. because a strategy
//!   samples fewer clients) cannot shift any other stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tag: synthetic dataset sampling.
pub const STREAM_DATA: u64 = 0x01;
/// Stream tag: assigning samples to clients.
pub const STREAM_PARTITION: u64 = 0x02;
/// Stream tag: model weight initialization.
pub const STREAM_INIT: u64 = 0x03;
/// Stream tag: per-round client subset selection.
pub const STREAM_SAMPLE: u64 = 0x04;
/// Stream tag: per-client minibatch shuffling.
pub const STREAM_SHUFFLE: u64 = 0x05;
/// Stream tag: harmonization peer-visitation order.
pub const STREAM_HARMONIZE: u64 = 0x06;

/// One round of the splitmix64 output function.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Collapses a list of stream parts into a single 64-bit seed.
///
/// The fold is order-sensitive: `[a, b]` and `[b, a]` derive different seeds.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut state: u64 = 0x6A09_E667_F3BC_C909;
    for &part in parts {
        state = splitmix64(state ^ splitmix64(part));
    }
    state
}

/// Builds the generator for the stream identified by `parts`.
pub fn stream_rng(parts: &[u64]) -> ChaCha8Rng {
    let mut x = derive_seed(parts);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        x = splitmix64(x);
        chunk.copy_from_slice(&x.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
