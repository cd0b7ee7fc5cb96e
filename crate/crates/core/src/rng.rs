//! Named random sub-streams derived from a single root seed.
//!
//! Every consumer of randomness (corpus synthesis, mixing, policy
//! initialisation, rollouts) draws from its own stream so that changing how
//! much one component consumes never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

// splitmix64 finaliser
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed value for the `index`-th member of stream `name` under `root`.
pub fn derive_seed(root: u64, name: &str, index: u64) -> u64 {
    mix(root ^ mix(fnv1a(name.as_bytes()) ^ mix(index.wrapping_add(0x9e37_79b9_7f4a_7c15))))
}

pub fn substream(root: u64, name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(root, name, index))
}
