use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator threaded through every stochastic operation.
pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream seed from a base seed and a label (splitmix64 mix).
pub fn derive_seed(base: u64, label: u64) -> u64 {
    let mut z = base ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
