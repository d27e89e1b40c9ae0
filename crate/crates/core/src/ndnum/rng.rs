//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator (a counter-based cipher stream)
//! keyed by a 64-bit seed mixed with a list of tags, so independent
//! consumers (per run, per epoch, per sample) draw from disjoint,
//! platform-independent sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Stream = ChaCha8Rng;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives a child seed from `seed` and `tags`.
pub fn derive(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix(seed), |acc, &t| splitmix(acc ^ splitmix(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive(seed, tags))
}

/// Stable 64-bit tag for a string label.
pub fn tag(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

pub fn rademacher(rng: &mut Stream, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

/// Uniform direction on the unit sphere in `R^n`.
pub fn unit_sphere(rng: &mut Stream, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn normal_vec(rng: &mut Stream, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn uniform_vec(rng: &mut Stream, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Fisher-Yates shuffle of `0..n`.
pub fn permutation(rng: &mut Stream, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        p.swap(i, j);
    }
    p
}
