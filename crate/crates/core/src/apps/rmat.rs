//! Recursive-matrix power-law graph generator with the Graph500 parameters.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::csr::CsrGraph;

pub const RMAT_A: f64 = 0.57;
pub const RMAT_B: f64 = 0.19;
pub const RMAT_C: f64 = 0.19;

/// Largest integer edge weight; weights are drawn uniformly from 1..=MAX.
pub const MAX_WEIGHT: u32 = 63;

/// `edge_factor * 2^scale` directed edges over `2^scale` vertices. Vertex
/// labels are randomly permuted; self-loops and duplicates are removed, so
/// the final edge count is somewhat lower than requested.
pub fn rmat_generate(scale: u32, edge_factor: u32, seed: u64) -> CsrGraph {
    assert!((1..32).contains(&scale), "scale must be in 1..32");
    let n = 1u32 << scale;
    let m = edge_factor as u64 * n as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<u32> = (0..n).collect();
    perm.shuffle(&mut rng);
    let ab = RMAT_A + RMAT_B;
    let abc = ab + RMAT_C;
    let mut edges = Vec::with_capacity(m as usize);
    for _ in 0..m {
        let (mut u, mut v) = (0u32, 0u32);
        for bit in (0..scale).rev() {
            let r: f64 = rng.gen();
            let (du, dv) = if r < RMAT_A {
                (0, 0)
            } else if r < ab {
                (0, 1)
            } else if r < abc {
                (1, 0)
            } else {
                (1, 1)
            };
            u |= du << bit;
            v |= dv << bit;
        }
        let w = rng.gen_range(1..=MAX_WEIGHT) as f32;
        edges.push((perm[u as usize], perm[v as usize], w));
    }
    CsrGraph::from_edges(n, edges)
}
