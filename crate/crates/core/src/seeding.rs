//! Counter-based RNG stream derivation.
//!
//! Every random decision in the pipeline draws from a [`ChaCha8Rng`] whose
//! key comes from the global run seed and whose stream id comes from the
//! object being processed (a problem id, an epoch/example pair, ...). Stream
//! contents therefore never depend on scheduling or worker count:
//!
//! * `stream(seed, id)` keys ChaCha with `seed` and selects stream `id`.
//! * `substream(seed, &[a, b, ..])` first folds the tag list into a single
//!   64-bit id with SplitMix64 and then calls `stream`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Environment variable consulted by the CLI when `--seed` is absent.
pub const SEED_ENV: &str = "MOTION_FORGE_SEED";

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, id: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn substream(seed: u64, tags: &[u64]) -> Rng {
    let id = tags
        .iter()
        .fold(0x5EED_u64, |acc, &t| splitmix64(acc ^ splitmix64(t)));
    stream(seed, id)
}
