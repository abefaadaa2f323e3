//! Sequential host implementations used as references.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use super::csr::CsrGraph;

pub const UNREACHED: u64 = u64::MAX;

pub fn bfs(g: &CsrGraph, root: u32) -> Vec<u64> {
    let mut d = vec![UNREACHED; g.num_vertices() as usize];
    d[root as usize] = 0;
    let mut q = VecDeque::from([root]);
    while let Some(u) = q.pop_front() {
        for i in g.row(u) {
            let v = g.col_idx[i] as usize;
            if d[v] == UNREACHED {
                d[v] = d[u as usize] + 1;
                q.push_back(v as u32);
            }
        }
    }
    d
}

/// Dijkstra over integer weights.
pub fn sssp(g: &CsrGraph, root: u32) -> Vec<u64> {
    let mut d = vec![UNREACHED; g.num_vertices() as usize];
    d[root as usize] = 0;
    let mut heap = BinaryHeap::from([Reverse((0u64, root))]);
    while let Some(Reverse((du, u))) = heap.pop() {
        if du > d[u as usize] {
            continue;
        }
        for i in g.row(u) {
            let v = g.col_idx[i] as usize;
            let nd = du + g.values[i] as u64;
            if nd < d[v] {
                d[v] = nd;
                heap.push(Reverse((nd, v as u32)));
            }
        }
    }
    d
}

/// Smallest vertex ID of each weakly connected component.
pub fn wcc(g: &CsrGraph) -> Vec<u64> {
    let n = g.num_vertices() as usize;
    let mut parent: Vec<u32> = (0..n as u32).collect();
    fn find(p: &mut [u32], mut x: u32) -> u32 {
        while p[x as usize] != x {
            p[x as usize] = p[p[x as usize] as usize];
            x = p[x as usize];
        }
        x
    }
    for (u, v, _) in g.edges() {
        let (a, b) = (find(&mut parent, u), find(&mut parent, v));
        if a != b {
            // The root is always the smaller ID.
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            parent[hi as usize] = lo;
        }
    }
    (0..n as u32).map(|v| find(&mut parent, v) as u64).collect()
}

/// Synchronous PageRank without dangling-mass redistribution.
pub fn pagerank(g: &CsrGraph, iters: u32, damping: f64) -> Vec<f64> {
    let n = g.num_vertices() as usize;
    let mut rank = vec![1.0 / n as f64; n];
    for _ in 0..iters {
        let mut acc = vec![0.0; n];
        for u in 0..n as u32 {
            let deg = g.degree(u);
            if deg == 0 {
                continue;
            }
            let c = rank[u as usize] / deg as f64;
            for i in g.row(u) {
                acc[g.col_idx[i] as usize] += c;
            }
        }
        for (r, a) in rank.iter_mut().zip(acc) {
            *r = (1.0 - damping) / n as f64 + damping * a;
        }
    }
    rank
}

/// `y = A x` with `A[i][j]` the weight of edge `i -> j`.
pub fn spmv(g: &CsrGraph, x: &[f64]) -> Vec<f64> {
    (0..g.num_vertices()).map(|i| g.row(i).map(|k| g.values[k] as f64 * x[g.col_idx[k] as usize]).sum()).collect()
}

/// `Y = A B` for a row-major `V x cols` matrix `B`.
pub fn spmm(g: &CsrGraph, b: &[f64], cols: usize) -> Vec<f64> {
    let mut y = vec![0.0; g.num_vertices() as usize * cols];
    for i in 0..g.num_vertices() {
        for k in g.row(i) {
            let j = g.col_idx[k] as usize;
            for c in 0..cols {
                y[i as usize * cols + c] += g.values[k] as f64 * b[j * cols + c];
            }
        }
    }
    y
}

/// Bin of column index `col` among `bins` equal-width bins over `n` IDs.
pub fn bin_of(col: u32, n: u32, bins: u32) -> u32 {
    (col as u64 * bins as u64 / n as u64) as u32
}

pub fn histogram(g: &CsrGraph, bins: u32) -> Vec<u64> {
    let mut h = vec![0u64; bins as usize];
    for &c in &g.col_idx {
        h[bin_of(c, g.num_vertices(), bins) as usize] += 1;
    }
    h
}

/// Linear index of element `(x, y, z)` of an `n^3` tensor.
pub fn idx3(n: usize, x: usize, y: usize, z: usize) -> usize {
    (z * n + y) * n + x
}

fn twiddle(n: usize, k: usize) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI * (k % n) as f64 / n as f64)
}

/// Forward 3D DFT by the full triple sum, O(n^6).
pub fn dft3d_direct(input: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); n * n * n];
    for kz in 0..n {
        for ky in 0..n {
            for kx in 0..n {
                let mut s = Complex64::new(0.0, 0.0);
                for z in 0..n {
                    for y in 0..n {
                        for x in 0..n {
                            s += input[idx3(n, x, y, z)] * twiddle(n, kx * x + ky * y + kz * z);
                        }
                    }
                }
                out[idx3(n, kx, ky, kz)] = s;
            }
        }
    }
    out
}

/// Forward 3D DFT as three passes of direct 1D DFTs, O(n^4).
pub fn dft3d_separable(input: &[Complex64], n: usize) -> Vec<Complex64> {
    let mut a = input.to_vec();
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for axis in 0..3 {
        for p in 0..n {
            for q in 0..n {
                let at = |i: usize| match axis {
                    0 => idx3(n, i, p, q),
                    1 => idx3(n, p, i, q),
                    _ => idx3(n, p, q, i),
                };
                for (k, l) in line.iter_mut().enumerate() {
                    *l = (0..n).map(|i| a[at(i)] * twiddle(n, k * i)).sum();
                }
                for (k, &l) in line.iter().enumerate() {
                    a[at(k)] = l;
                }
            }
        }
    }
    a
}
