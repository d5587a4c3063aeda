//! Seeded random streams.
//!
//! Every stream is a xoshiro256++ generator whose 256-bit state is expanded
//! from a 64-bit key by SplitMix64. Keys combine the user seed, a purpose tag
//! and an index (clip, example, step), so each draw depends only on that
//! triple and never on scheduling.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

/// What a stream is used for. Distinct purposes never share draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Synth = 1,
    Split = 2,
    PairNoise = 3,
    Init = 4,
    Shuffle = 5,
    Latent = 6,
    Augment = 7,
    Validation = 8,
    Eval = 9,
    Lmmse = 10,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> Rng {
    let key = splitmix(splitmix(splitmix(seed) ^ purpose as u64) ^ index);
    Rng::seed_from_u64(key)
}

pub fn standard_normal(rng: &mut Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            v as f32
        })
        .collect()
}

pub fn standard_normal_f64(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
