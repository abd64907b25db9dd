#![allow(dead_code)]

use asyncrank::kernels::GoogleParams;
use asyncrank::webgraph::{generate_synthetic, AdjacencyGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Synthetic graph with `n` pages and a seed-dependent density and dangling
/// fraction.
pub fn random_graph(n: usize, seed: u64) -> AdjacencyGraph {
    let mut r = rng(seed ^ 0x9e37_79b9_7f4a_7c15);
    let avg = r.random_range(1.0..8.0);
    let dangling = [0.0, 0.05, 0.2, 0.5][r.random_range(0..4)];
    generate_synthetic(n, avg, dangling, seed).unwrap()
}

pub fn random_teleport(n: usize, r: &mut impl Rng) -> GoogleParams {
    let raw: Vec<f64> = (0..n).map(|_| r.random_range(0.01..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    let mut v: Vec<f64> = raw.iter().map(|x| x / sum).collect();
    // Push the rounding error into one entry so the sum is 1 to within an ulp.
    let drift: f64 = 1.0 - v.iter().sum::<f64>();
    v[0] += drift;
    GoogleParams::with_teleport(0.85, v).unwrap()
}

pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}
