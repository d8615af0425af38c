//! Seeded random streams.
//!
//! Every parallel work unit receives its own stream derived from the master
//! seed and the unit's position in the work tree, so results never depend on
//! scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for the master seed itself.
pub fn master(seed: u64) -> Stream {
    Stream::seed_from_u64(splitmix64(seed))
}

/// Child stream identified by a path of unit indices below `seed`.
pub fn child(seed: u64, path: &[u64]) -> Stream {
    Stream::seed_from_u64(child_seed(seed, path))
}

/// The derived 64-bit seed behind [`child`].
pub fn child_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &i| splitmix64(acc ^ splitmix64(i.wrapping_add(1))))
}
