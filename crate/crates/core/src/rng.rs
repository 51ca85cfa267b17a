//! Counter-based random streams.
//!
//! Every consumer (a sampler chain, a dataset generator, a trainer) owns a ChaCha8 stream
//! addressed by `(seed, stream id)`. ChaCha is a counter-mode cipher, so the k-th draw of a
//! stream depends only on its address and k, never on how other streams were scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha8Rng;

/// Stream ids reserved for library-internal consumers. Sampler chains use `2^32 + chain index`.
pub mod streams {
    pub const TRAIN_BATCHES: u64 = 0;
    pub const SCORE_INIT: u64 = 1;
    pub const DISC_INIT: u64 = 2;
    pub const DATASET: u64 = 3;
}

pub fn stream(seed: u64, id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn fill_standard_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    fill_standard_normal(rng, &mut v);
    v
}
