//! Counter-based random streams.
//!
//! Every draw in the system comes from a ChaCha stream keyed by
//! `(seed, purpose, counter, index)`. No generator state is carried between
//! steps, so resuming a run only needs the seed and the iteration count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffcore::Real;

/// What a stream is used for. Distinct purposes never share a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    BatchIndex = 2,
    Noise = 3,
    Time = 4,
    Latent = 5,
    Dataset = 6,
    Projection = 7,
    Eval = 8,
}

pub fn stream(seed: u64, purpose: Purpose, counter: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    key[16..24].copy_from_slice(&counter.to_le_bytes());
    key[24..32].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Stable 64-bit FNV-1a hash, used to key streams by name.
pub fn name_key(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn normal_vec<T: Real>(rng: &mut ChaCha8Rng, len: usize) -> Vec<T> {
    (0..len)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            T::from_f64(z).unwrap()
        })
        .collect()
}

/// Uniform draw on `[lo, hi)`.
pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Standard normal latents, one stream per row.
pub fn latents<T: Real>(seed: u64, counter: u64, rows: usize, dim: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * dim);
    for r in 0..rows {
        let mut s = stream(seed, Purpose::Latent, counter, r as u64);
        out.extend(normal_vec::<T>(&mut s, dim));
    }
    out
}
