//! Seed derivation. Every stochastic stage draws from its own ChaCha stream
//! keyed by (master seed, stage, index) so that stages never share state and
//! a run can be resumed at any iteration with identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stage tags mixed into derived seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stage {
    Sp = 1,
    IForest = 2,
    Init = 3,
    Train = 4,
    FineTune = 5,
    Scene = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, stage: Stage, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stage as u64)) ^ index)
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stage_rng(master: u64, stage: Stage, index: u64) -> Rng {
    rng(derive(master, stage, index))
}
