use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// 64-bit FNV-1a, used to derive independent seeds from names.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Mixes a base seed with a label into a new seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut z = seed ^ fnv1a(label.as_bytes());
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic RNG for the parameter called `name`, independent of how
/// many other parameters exist.
pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name))
}

pub fn normal_vec(len: usize, mean: f64, std: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if std == 0.0 {
        return vec![mean; len];
    }
    let dist = Normal::new(mean, std).expect("finite positive std");
    (0..len).map(|_| dist.sample(rng)).collect()
}
