//! Seed plumbing.
//!
//! Every stochastic component draws from a ChaCha8 stream selected by
//! `(seed, stream)`. Work items that must be reproducible regardless of how
//! they are scheduled across threads use their own index as the stream id.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest as _, Sha256};

/// RNG for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent named sub-seed from a master seed.
///
/// `substream(s, "world")` and `substream(s, "sampler")` are unrelated, so
/// one component can be varied without perturbing the others.
pub fn substream(master: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(name.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 is 32 bytes"))
}
