//! Counter-derived random streams.
//!
//! Every Monte Carlo work item draws from its own stream, addressed by the
//! master seed plus a path of indices (cell, trial, sample, ...). Results are
//! therefore independent of scheduling and thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds an index path into a single 64-bit value.
pub fn derive(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &x| splitmix64(acc ^ splitmix64(x)))
}

/// A ChaCha8 stream keyed by `seed` and positioned on the stream named by `path`.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(derive(seed, path));
    rng
}
