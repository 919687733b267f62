//! Named, replayable randomness. Every random draw in the pipeline flows
//! from one global seed through (name, index) sub-streams, so any stage can
//! be reproduced in isolation — including resuming mid-run, because
//! per-step streams are a pure function of (seed, name, step).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stable 64-bit FNV-1a (no per-process hash randomization).
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Counter-style sub-stream derived from (seed, name, index).
pub fn stream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = splitmix64(seed ^ fnv1a(name.as_bytes()));
    state = splitmix64(state ^ index.wrapping_mul(0x2545f4914f6cdd1d));
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Standard-normal draws. Sampling happens in f64 and is narrowed once so
/// the stream of variates is precision-independent.
pub fn randn_vec<T: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            T::from_f64(v)
        })
        .collect()
}

pub fn randn_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, randn_vec(rng, n)).expect("randn shape")
}

/// N(0, 1/fan_in) weights — the initialization every layer here uses.
pub fn init_weights<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let std = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            T::from_f64(v * std)
        })
        .collect();
    Tensor::from_vec(shape, data).expect("init shape")
}
