//! PageRank with a fixed number of synchronous iterations, one kernel each.
//! Kernel `k` folds the sums of iteration `k - 1` into new ranks and then
//! scatters `rank / out_degree` along every out-edge.

use std::sync::Arc;

use super::csr::CsrGraph;
use super::partition::{Layout, Partition};
use super::{oracle, Benchmark, Output, Work};
use crate::engine::{App, TaskCtx, TaskDescriptor, TaskId, TileInfo};
use crate::noc::Payload;

const NO_EDGE: u64 = u64::MAX;

pub struct PageRank {
    graph: Arc<CsrGraph>,
    part: Partition,
    iters: u32,
    damping: f64,
}

#[derive(Debug, Default)]
struct Addrs {
    row_ptr: u64,
    col: u64,
    rank: u64,
    acc: u64,
}

pub struct PageRankTile {
    lo: u64,
    row_ptr: Vec<u64>,
    col: Vec<u32>,
    rank: Vec<f64>,
    acc: Vec<f64>,
    kernel: Option<u32>,
    pos: usize,
    edge: u64,
    contrib: f64,
    addr: Addrs,
}

fn sum_combine(d: &mut Payload, s: &Payload) {
    d[1] = (f64::from_bits(d[1]) + f64::from_bits(s[1])).to_bits();
}

impl PageRank {
    pub fn new(graph: Arc<CsrGraph>, tiles: u32, iters: u32, damping: f64) -> Self {
        let part = Partition::new(graph.num_vertices() as u64, tiles);
        PageRank { graph, part, iters, damping }
    }

    fn layout(&self, tile: u32, base: u64) -> (Addrs, u64) {
        let r = self.part.range(tile);
        let n = r.end - r.start;
        let nnz = self.graph.row_ptr[r.end as usize] - self.graph.row_ptr[r.start as usize];
        let mut l = Layout::default();
        let a = Addrs {
            row_ptr: l.array(base, n + 1, 8),
            col: l.array(base, nnz, 4),
            rank: l.array(base, n, 4),
            acc: l.array(base, n, 4),
        };
        (a, l.bytes())
    }
}

impl App for PageRank {
    type Tile = PageRankTile;

    fn name(&self) -> &str {
        "pagerank"
    }

    fn tasks(&self) -> Vec<TaskDescriptor> {
        vec![TaskDescriptor::leaf(0, "accum", 64).with_combine(sum_combine)]
    }

    fn generator_targets(&self) -> Vec<TaskId> {
        vec![0]
    }

    fn kernels(&self) -> u32 {
        self.iters + 1
    }

    fn footprint(&self, tile: u32) -> u64 {
        self.layout(tile, 0).1
    }

    fn make_tile(&self, info: &TileInfo) -> PageRankTile {
        let r = self.part.range(info.index);
        let g = &self.graph;
        let (lo, hi) = (r.start as usize, r.end as usize);
        let (e0, e1) = (g.row_ptr[lo] as usize, g.row_ptr[hi] as usize);
        let n = hi - lo;
        PageRankTile {
            lo: r.start,
            row_ptr: g.row_ptr[lo..=hi].iter().map(|p| p - e0 as u64).collect(),
            col: g.col_idx[e0..e1].to_vec(),
            rank: vec![1.0 / g.num_vertices() as f64; n],
            acc: vec![0.0; n],
            kernel: None,
            pos: 0,
            edge: NO_EDGE,
            contrib: 0.0,
            addr: self.layout(info.index, info.data_base).0,
        }
    }

    fn init(&self, st: &mut PageRankTile, ctx: &mut TaskCtx) -> bool {
        let a = &st.addr;
        if st.kernel != Some(ctx.kernel) {
            st.kernel = Some(ctx.kernel);
            st.pos = 0;
            st.edge = NO_EDGE;
            if ctx.kernel > 0 {
                let base = (1.0 - self.damping) / self.graph.num_vertices() as f64;
                for (i, (r, acc)) in st.rank.iter_mut().zip(st.acc.iter_mut()).enumerate() {
                    ctx.load(a.acc + 4 * i as u64);
                    ctx.fp(2);
                    *r = base + self.damping * *acc;
                    *acc = 0.0;
                    ctx.store(a.rank + 4 * i as u64);
                    ctx.store(a.acc + 4 * i as u64);
                }
            }
        }
        if ctx.kernel >= self.iters {
            return false;
        }
        while st.pos < st.rank.len() {
            let u = st.pos;
            if st.edge == NO_EDGE {
                ctx.load(a.row_ptr + 8 * u as u64);
                ctx.load(a.row_ptr + 8 * (u as u64 + 1));
                ctx.load(a.rank + 4 * u as u64);
                let deg = st.row_ptr[u + 1] - st.row_ptr[u];
                ctx.fp(1);
                st.contrib = if deg == 0 { 0.0 } else { st.rank[u] / deg as f64 };
                st.edge = st.row_ptr[u];
            }
            while st.edge < st.row_ptr[u + 1] {
                if !ctx.can_send() {
                    return true;
                }
                let e = st.edge as usize;
                ctx.load(a.col + 4 * e as u64);
                ctx.int(1);
                let v = st.col[e] as u64;
                ctx.send(self.part.owner(v), 0, &[v, st.contrib.to_bits()]);
                st.edge += 1;
            }
            ctx.branch(1);
            st.pos += 1;
            st.edge = NO_EDGE;
        }
        false
    }

    fn task(&self, _id: TaskId, st: &mut PageRankTile, p: &[u64], ctx: &mut TaskCtx) {
        let li = (p[0] - st.lo) as usize;
        ctx.int(1);
        ctx.load(st.addr.acc + 4 * li as u64);
        ctx.fp(1);
        st.acc[li] += f64::from_bits(p[1]);
        ctx.store(st.addr.acc + 4 * li as u64);
    }

    fn prefetch_addrs(&self, _id: TaskId, st: &PageRankTile, p: &[u64], out: &mut Vec<u64>) {
        out.push(st.addr.acc + 4 * (p[0] - st.lo));
    }
}

impl Benchmark for PageRank {
    fn output(&self, tiles: &[PageRankTile]) -> Output {
        Output::Float(tiles.iter().flat_map(|t| t.rank.iter().copied()).collect())
    }

    fn reference(&self) -> Output {
        Output::Float(oracle::pagerank(&self.graph, self.iters, self.damping))
    }

    fn label(&self) -> &'static str {
        "vertex"
    }

    fn work(&self, _reference: &Output) -> Work {
        Work { items: self.graph.num_edges() * self.iters as u64, basis: "edges per iteration times iterations" }
    }
}
