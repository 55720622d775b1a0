//! Seed derivation. Every random draw in the library flows from one root
//! seed through [`rng_for`], keyed by a purpose tag plus context indices.
//! Derivation is stateless, so two call sites never share a stream and a
//! resumed run sees the same draws as an uninterrupted one.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tag for a derived random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Holdout = 2,
    Shuffle = 3,
    Noise = 4,
    Hint = 5,
    Synthetic = 6,
    Corrupt = 7,
    Search = 8,
    Dropout = 9,
    Regressor = 10,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes the root seed with the stream tag and context indices into one u64.
pub fn derive(root: u64, stream: Stream, parts: &[u64]) -> u64 {
    let mut state = root ^ 0x6a09_e667_f3bc_c908;
    let mut out = splitmix64(&mut state);
    state ^= stream as u64;
    out ^= splitmix64(&mut state);
    for &p in parts {
        state ^= p;
        out ^= splitmix64(&mut state);
    }
    out
}

/// A ChaCha generator for one (root, stream, context) triple.
pub fn rng_for(root: u64, stream: Stream, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, stream, parts))
}
