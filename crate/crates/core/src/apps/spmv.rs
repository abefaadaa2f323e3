//! Sparse matrix times dense vector (one column) or dense matrix.
//!
//! The matrix is stored column-wise: the tile owning column `j` also owns
//! `x[j]`, multiplies it into every non-zero of the column and sends the
//! partial products to the owners of the output rows, which accumulate them.

use std::sync::Arc;

use super::csr::CsrGraph;
use super::partition::{Layout, Partition};
use super::{oracle, Benchmark, Output, Work};
use crate::engine::{App, TaskCtx, TaskDescriptor, TaskId, TileInfo};
use crate::noc::Payload;

const NO_EDGE: u64 = u64::MAX;

pub struct Spmv {
    matrix: Arc<CsrGraph>,
    /// Column-major copy of `matrix`.
    cols_major: CsrGraph,
    part: Partition,
    cols: usize,
    x: Vec<f64>,
}

#[derive(Debug, Default)]
struct Addrs {
    col_ptr: u64,
    row: u64,
    val: u64,
    x: u64,
    y: u64,
}

pub struct SpmvTile {
    lo: u64,
    col_ptr: Vec<u64>,
    row: Vec<u32>,
    val: Vec<f32>,
    x: Vec<f64>,
    y: Vec<f64>,
    pos: usize,
    edge: u64,
    addr: Addrs,
}

fn sum_combine(d: &mut Payload, s: &Payload) {
    for i in 1..d.len() {
        d[i] = (f64::from_bits(d[i]) + f64::from_bits(s[i])).to_bits();
    }
}

/// Deterministic dense operand; every entry is exact in FP32.
pub fn dense_operand(n: u32, cols: usize) -> Vec<f64> {
    (0..n as u64 * cols as u64).map(|k| ((k * 7919) % 97 + 1) as f64 / 64.0).collect()
}

impl Spmv {
    /// `cols == 1` is SPMV; larger values are SPMM with a `V x cols` operand.
    pub fn new(matrix: Arc<CsrGraph>, tiles: u32, cols: usize, x: Vec<f64>) -> Self {
        assert_eq!(x.len(), matrix.num_vertices() as usize * cols);
        let part = Partition::new(matrix.num_vertices() as u64, tiles);
        Spmv { cols_major: matrix.transpose(), matrix, part, cols, x }
    }

    fn layout(&self, tile: u32, base: u64) -> (Addrs, u64) {
        let r = self.part.range(tile);
        let n = r.end - r.start;
        let g = &self.cols_major;
        let nnz = g.row_ptr[r.end as usize] - g.row_ptr[r.start as usize];
        let c = self.cols as u64;
        let mut l = Layout::default();
        let a = Addrs {
            col_ptr: l.array(base, n + 1, 8),
            row: l.array(base, nnz, 4),
            val: l.array(base, nnz, 4),
            x: l.array(base, n * c, 4),
            y: l.array(base, n * c, 4),
        };
        (a, l.bytes())
    }
}

impl App for Spmv {
    type Tile = SpmvTile;

    fn name(&self) -> &str {
        if self.cols == 1 {
            "spmv"
        } else {
            "spmm"
        }
    }

    fn tasks(&self) -> Vec<TaskDescriptor> {
        vec![TaskDescriptor::leaf(0, "accum", 32 + 32 * self.cols as u32).with_combine(sum_combine)]
    }

    fn generator_targets(&self) -> Vec<TaskId> {
        vec![0]
    }

    fn footprint(&self, tile: u32) -> u64 {
        self.layout(tile, 0).1
    }

    fn make_tile(&self, info: &TileInfo) -> SpmvTile {
        let r = self.part.range(info.index);
        let g = &self.cols_major;
        let (lo, hi) = (r.start as usize, r.end as usize);
        let (e0, e1) = (g.row_ptr[lo] as usize, g.row_ptr[hi] as usize);
        let c = self.cols;
        SpmvTile {
            lo: r.start,
            col_ptr: g.row_ptr[lo..=hi].iter().map(|p| p - e0 as u64).collect(),
            row: g.col_idx[e0..e1].to_vec(),
            val: g.values[e0..e1].to_vec(),
            x: self.x[lo * c..hi * c].to_vec(),
            y: vec![0.0; (hi - lo) * c],
            pos: 0,
            edge: NO_EDGE,
            addr: self.layout(info.index, info.data_base).0,
        }
    }

    fn init(&self, st: &mut SpmvTile, ctx: &mut TaskCtx) -> bool {
        let a = &st.addr;
        let c = self.cols;
        let mut msg = [0u64; 17];
        let ncols = st.col_ptr.len() - 1;
        while st.pos < ncols {
            let j = st.pos;
            if st.edge == NO_EDGE {
                ctx.load(a.col_ptr + 8 * j as u64);
                ctx.load(a.col_ptr + 8 * (j as u64 + 1));
                for k in 0..c {
                    ctx.load(a.x + 4 * (j * c + k) as u64);
                }
                st.edge = st.col_ptr[j];
            }
            while st.edge < st.col_ptr[j + 1] {
                if !ctx.can_send() {
                    return true;
                }
                let e = st.edge as usize;
                ctx.load(a.row + 4 * e as u64);
                ctx.load(a.val + 4 * e as u64);
                ctx.fp(c as u64);
                let i = st.row[e] as u64;
                let w = st.val[e] as f64;
                msg[0] = i;
                for k in 0..c {
                    msg[k + 1] = (w * st.x[j * c + k]).to_bits();
                }
                ctx.send(self.part.owner(i), 0, &msg[..=c]);
                st.edge += 1;
            }
            ctx.branch(1);
            st.pos += 1;
            st.edge = NO_EDGE;
        }
        false
    }

    fn task(&self, _id: TaskId, st: &mut SpmvTile, p: &[u64], ctx: &mut TaskCtx) {
        let li = (p[0] - st.lo) as usize;
        let c = self.cols;
        ctx.int(1);
        for k in 0..c {
            let at = st.addr.y + 4 * (li * c + k) as u64;
            ctx.load(at);
            ctx.fp(1);
            st.y[li * c + k] += f64::from_bits(p[k + 1]);
            ctx.store(at);
        }
    }

    fn prefetch_addrs(&self, _id: TaskId, st: &SpmvTile, p: &[u64], out: &mut Vec<u64>) {
        out.push(st.addr.y + 4 * (p[0] - st.lo) * self.cols as u64);
    }
}

impl Benchmark for Spmv {
    fn output(&self, tiles: &[SpmvTile]) -> Output {
        Output::Float(tiles.iter().flat_map(|t| t.y.iter().copied()).collect())
    }

    fn reference(&self) -> Output {
        Output::Float(if self.cols == 1 {
            oracle::spmv(&self.matrix, &self.x)
        } else {
            oracle::spmm(&self.matrix, &self.x, self.cols)
        })
    }

    fn label(&self) -> &'static str {
        "element"
    }

    fn work(&self, _reference: &Output) -> Work {
        Work { items: self.matrix.num_edges(), basis: "non-zeros" }
    }
}
