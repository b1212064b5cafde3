//! Named, counter-based random streams derived from one master seed.
//!
//! Every random draw in the crate goes through [`stream`], so a component's
//! randomness depends only on `(master seed, stream name, index)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Derives a child seed, e.g. one seed per experiment run.
pub fn derive_seed(master: u64, name: &str, index: u64) -> u64 {
    splitmix(splitmix(master ^ fnv1a(name)).wrapping_add(index))
}

/// ChaCha stream keyed by `(master, name)`, positioned on sub-stream `index`.
pub fn stream(master: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(master ^ fnv1a(name)));
    rng.set_stream(index);
    rng
}
