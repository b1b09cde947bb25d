//! Counter-based random streams.
//!
//! Every random draw is keyed by `(seed, tag, index, step)`, so particle
//! updates can run in any order or thread layout and still reproduce.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StreamRng = Xoshiro256PlusPlus;

/// Stream tags separating the independent uses of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Tag {
    Init = 1,
    Joint = 2,
    Contrastive = 3,
    Outcome = 4,
    Digs = 5,
    Resample = 6,
    Diffusion = 7,
    ObsPath = 8,
    Evaluation = 9,
    Design = 10,
    Truth = 11,
    Replication = 12,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and an index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Generator for one `(seed, tag, index, step)` key.
pub fn stream(seed: u64, tag: Tag, index: u64, step: u64) -> StreamRng {
    let mut k = splitmix64(seed ^ 0xD1B5_4A32_D192_ED03);
    k = splitmix64(k ^ (tag as u64).wrapping_mul(0xA24B_AED4_963E_E407));
    k = splitmix64(k ^ index.wrapping_mul(0x9FB2_1C65_1E98_DF25));
    k = splitmix64(k ^ step);
    StreamRng::seed_from_u64(k)
}

pub fn normals<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Source of Gaussian increments for the samplers. `Frozen` yields zeros and is
/// used to test drift terms deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseSource {
    Stream { seed: u64, step: u64 },
    Frozen,
}

impl NoiseSource {
    pub fn new(seed: u64, step: u64) -> Self {
        NoiseSource::Stream { seed, step }
    }

    pub fn normals(&self, tag: Tag, index: u64, n: usize) -> Vec<f64> {
        match *self {
            NoiseSource::Stream { seed, step } => normals(&mut stream(seed, tag, index, step), n),
            NoiseSource::Frozen => vec![0.0; n],
        }
    }

    /// A uniform draw in `[0, 1)`, or `0.5` when frozen.
    pub fn uniform(&self, tag: Tag, index: u64) -> f64 {
        use rand::Rng;
        match *self {
            NoiseSource::Stream { seed, step } => stream(seed, tag, index, step).gen::<f64>(),
            NoiseSource::Frozen => 0.5,
        }
    }

    /// The same source advanced to a different step counter.
    pub fn at_step(&self, step: u64) -> Self {
        match *self {
            NoiseSource::Stream { seed, .. } => NoiseSource::Stream { seed, step },
            NoiseSource::Frozen => NoiseSource::Frozen,
        }
    }
}
