//! Keyed deterministic random streams.
//!
//! All randomness in the crate flows from one top-level `u64` seed. Every
//! independent consumer (a training-set sample, a guidance candidate at a
//! given step, an initial noise draw) derives its own ChaCha stream from the
//! seed plus a small key tuple, so serial and parallel execution produce
//! bit-identical results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; spreads key words into seed material and doubles as
/// a cheap stateless hash (procedural textures).
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One standard-normal draw; avoids type-annotation noise at call sites.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand_distr::Distribution;
    rand_distr::StandardNormal.sample(rng)
}

/// Derives an independent ChaCha8 stream from `seed` and a key tuple.
pub fn derive_rng(seed: u64, key: &[u64]) -> ChaCha8Rng {
    let mut state = mix(seed ^ 0x6d76_7379_6e74_6800); // "mvsynth" domain tag
    let mut seed_bytes = [0u8; 32];
    for word in key {
        state = mix(state ^ mix(*word));
    }
    for chunk in seed_bytes.chunks_mut(8) {
        state = mix(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed_bytes)
}

/// Key words used by the guidance sampler streams.
pub mod stream {
    /// Initial-noise stream for a view: `(INIT, view)`.
    pub const INIT: u64 = 0x01;
    /// Per-step candidate stream: `(STEP, view, step, candidate)`.
    pub const STEP: u64 = 0x02;
    /// Training loop stream.
    pub const TRAIN: u64 = 0x03;
    /// Training-set sample stream: `(DATASET, sample_index)`.
    pub const DATASET: u64 = 0x04;
    /// Synthetic scene texture stream.
    pub const SCENE: u64 = 0x05;
    /// Model parameter initialization stream.
    pub const MODEL_INIT: u64 = 0x06;
}
