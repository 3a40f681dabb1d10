//! Seed handling. Every random draw in the crate comes from a [`ChaCha8Rng`]
//! whose seed is derived from a master seed plus a path of indices, so the
//! result of drawing child `i` never depends on how many children were drawn
//! before it or on which thread drew it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags keep mask and noise draws for the same index independent.
pub(crate) mod stream {
    pub const MASK: u64 = 0x6d61_736b;
    pub const NOISE: u64 = 0x6e6f_6973;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const INIT: u64 = 0x696e_6974;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based split of `master` along `path`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &p| {
        splitmix64(acc ^ splitmix64(p.wrapping_add(0x632b_e59b_d9b4_e019)))
    })
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
