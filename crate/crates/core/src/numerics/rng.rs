use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Seeded random stream for dropout masks, weight init, and shuffling.
///
/// All randomness in the project flows from a single 64-bit seed; no
/// wall-clock entropy anywhere. Independent streams (init vs. shuffle vs.
/// dropout) are derived from the same seed with distinct stream ids so that
/// consuming one stream never perturbs another.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

/// splitmix64 finalizer; mixes seed and stream id into the ChaCha key.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::stream(seed, 0)
    }

    /// Stream `stream` of the generator family keyed by `seed`.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let key = mix(seed ^ mix(stream));
        RngState {
            seed,
            stream,
            rng: ChaCha8Rng::seed_from_u64(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    /// Uniform draw from [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// N(0, std²) truncated to ±2·std by rejection.
    pub fn normal_truncated(&mut self, std: f64) -> f64 {
        let normal = Normal::new(0.0, std).expect("std must be finite and positive");
        loop {
            let x = normal.sample(&mut self.rng);
            if x.abs() <= 2.0 * std {
                return x;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        use rand::seq::SliceRandom;
        xs.shuffle(&mut self.rng);
    }
}
