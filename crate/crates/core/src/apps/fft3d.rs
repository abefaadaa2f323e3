//! 3D FFT of an `n^3` tensor on `n^2` tiles with a pencil decomposition.
//!
//! Tile `t = b*n + a` starts with the z-pencil `(a, b, :)`. Kernel 0
//! transforms along z and sends element `kz` to the tile holding y-pencil
//! `(a, :, kz)`; kernel 1 transforms along y and sends element `ky` to the
//! tile holding x-pencil `(:, ky, kz)`; kernel 2 transforms along x.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::oracle::{dft3d_separable, idx3};
use super::partition::Layout;
use super::{Benchmark, Output, Work};
use crate::engine::{App, TaskCtx, TaskDescriptor, TaskId, TileInfo};

pub struct Fft3d {
    n: usize,
    input: Vec<Complex64>,
    plan: Arc<dyn Fft<f64>>,
}

pub struct FftTile {
    index: usize,
    data: Vec<Complex64>,
    /// Elements arriving for the next kernel.
    recv: Vec<Complex64>,
    kernel: Option<u32>,
    transformed: bool,
    pos: usize,
    base: u64,
    scratch: Vec<Complex64>,
}

/// Pseudo-random tensor with components in [-1, 1).
pub fn random_tensor(n: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * n * n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

impl Fft3d {
    pub fn new(n: usize, input: Vec<Complex64>) -> Self {
        assert_eq!(input.len(), n * n * n);
        let plan = FftPlanner::new().plan_fft_forward(n);
        Fft3d { n, input, plan }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Floating-point operations of one length-`n` complex FFT.
    fn fft_flops(&self) -> u64 {
        let n = self.n as u64;
        5 * n * n.ilog2() as u64
    }
}

impl App for Fft3d {
    type Tile = FftTile;

    fn name(&self) -> &str {
        "fft3d"
    }

    fn tasks(&self) -> Vec<TaskDescriptor> {
        vec![TaskDescriptor::leaf(0, "to_y", 96), TaskDescriptor::leaf(1, "to_x", 96)]
    }

    fn generator_targets(&self) -> Vec<TaskId> {
        vec![0, 1]
    }

    fn kernels(&self) -> u32 {
        3
    }

    fn footprint(&self, _tile: u32) -> u64 {
        let mut l = Layout::default();
        l.array(0, self.n as u64, 8);
        l.array(0, self.n as u64, 8);
        l.bytes()
    }

    fn make_tile(&self, info: &TileInfo) -> FftTile {
        let n = self.n;
        let t = info.index as usize;
        let (a, b) = (t % n, t / n);
        let data = if t < n * n { (0..n).map(|z| self.input[idx3(n, a, b, z)]).collect() } else { vec![] };
        FftTile {
            index: t,
            recv: vec![Complex64::new(0.0, 0.0); data.len()],
            data,
            kernel: None,
            transformed: false,
            pos: 0,
            base: info.data_base,
            scratch: vec![Complex64::new(0.0, 0.0); self.plan.get_inplace_scratch_len()],
        }
    }

    fn init(&self, st: &mut FftTile, ctx: &mut TaskCtx) -> bool {
        let n = self.n;
        if st.data.is_empty() {
            return false;
        }
        if st.kernel != Some(ctx.kernel) {
            st.kernel = Some(ctx.kernel);
            if ctx.kernel > 0 {
                std::mem::swap(&mut st.data, &mut st.recv);
            }
            st.transformed = false;
            st.pos = 0;
        }
        if !st.transformed {
            for i in 0..n as u64 {
                ctx.load(st.base + 8 * i);
            }
            ctx.fp(self.fft_flops());
            self.plan.process_with_scratch(&mut st.data, &mut st.scratch);
            for i in 0..n as u64 {
                ctx.store(st.base + 8 * i);
            }
            st.transformed = true;
        }
        // Tile t = hi*n + lo holds a pencil along one axis; element k goes
        // to tile k*n + lo (kernel 0) or hi*n + k (kernel 1) at position
        // hi (kernel 0) or lo (kernel 1).
        let (lo, hi) = (st.index % n, st.index / n);
        let (task, dest, at): (TaskId, fn(usize, usize, usize, usize) -> usize, usize) = match ctx.kernel {
            0 => (0, |n, k, lo, _| k * n + lo, hi),
            1 => (1, |n, k, _, hi| hi * n + k, lo),
            _ => return false,
        };
        while st.pos < n {
            if !ctx.can_send() {
                return true;
            }
            let k = st.pos;
            ctx.load(st.base + 8 * k as u64);
            ctx.int(2);
            let v = st.data[k];
            ctx.send(dest(n, k, lo, hi) as u32, task, &[at as u64, v.re.to_bits(), v.im.to_bits()]);
            st.pos += 1;
        }
        false
    }

    fn task(&self, _id: TaskId, st: &mut FftTile, p: &[u64], ctx: &mut TaskCtx) {
        let i = p[0] as usize;
        ctx.int(1);
        st.recv[i] = Complex64::new(f64::from_bits(p[1]), f64::from_bits(p[2]));
        ctx.store(st.base + 8 * (self.n + i) as u64);
    }
}

impl Benchmark for Fft3d {
    fn output(&self, tiles: &[FftTile]) -> Output {
        let n = self.n;
        let mut out = vec![0.0; 2 * n * n * n];
        for t in tiles.iter().take(n * n) {
            let (ky, kz) = (t.index % n, t.index / n);
            for (kx, v) in t.data.iter().enumerate() {
                let i = idx3(n, kx, ky, kz);
                out[2 * i] = v.re;
                out[2 * i + 1] = v.im;
            }
        }
        Output::Float(out)
    }

    fn reference(&self) -> Output {
        Output::Float(dft3d_separable(&self.input, self.n).iter().flat_map(|c| [c.re, c.im]).collect())
    }

    fn label(&self) -> &'static str {
        "component"
    }

    fn work(&self, _reference: &Output) -> Work {
        Work { items: (self.n * self.n * self.n) as u64, basis: "elements" }
    }
}
