//! Named random sub-streams derived from a single root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used everywhere in the crate. ChaCha is portable across
/// platforms and crate versions, so seeded runs are reproducible.
pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Seed for sub-stream `index` of the stream called `name` under `root`.
pub fn derive_seed(root: u64, name: &str, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ fnv1a(name.as_bytes())).wrapping_add(index))
}

/// Generator for sub-stream `index` of `name`.
pub fn stream(root: u64, name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(root, name, index))
}
