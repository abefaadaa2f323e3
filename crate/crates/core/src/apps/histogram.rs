//! Histogram of the column indices of a sparse matrix's non-zeros. Bins are
//! spread over the tiles like any other array.

use std::sync::Arc;

use super::csr::CsrGraph;
use super::partition::{Layout, Partition};
use super::{oracle, Benchmark, Output, Work};
use crate::engine::{App, TaskCtx, TaskDescriptor, TaskId, TileInfo};
use crate::noc::Payload;

pub struct Histogram {
    graph: Arc<CsrGraph>,
    rows: Partition,
    bins: Partition,
}

#[derive(Debug, Default)]
struct Addrs {
    col: u64,
    hist: u64,
}

pub struct HistogramTile {
    lo_bin: u64,
    col: Vec<u32>,
    hist: Vec<u64>,
    pos: usize,
    addr: Addrs,
}

fn sum_combine(d: &mut Payload, s: &Payload) {
    d[1] += s[1];
}

impl Histogram {
    pub fn new(graph: Arc<CsrGraph>, tiles: u32, bins: u32) -> Self {
        let rows = Partition::new(graph.num_vertices() as u64, tiles);
        Histogram { graph, rows, bins: Partition::new(bins as u64, tiles) }
    }

    fn edges(&self, tile: u32) -> std::ops::Range<usize> {
        let r = self.rows.range(tile);
        self.graph.row_ptr[r.start as usize] as usize..self.graph.row_ptr[r.end as usize] as usize
    }

    fn layout(&self, tile: u32, base: u64) -> (Addrs, u64) {
        let mut l = Layout::default();
        let a = Addrs {
            col: l.array(base, self.edges(tile).len() as u64, 4),
            hist: l.array(base, self.bins.len(tile), 4),
        };
        (a, l.bytes())
    }
}

impl App for Histogram {
    type Tile = HistogramTile;

    fn name(&self) -> &str {
        "histogram"
    }

    fn tasks(&self) -> Vec<TaskDescriptor> {
        vec![TaskDescriptor::leaf(0, "count", 64).with_combine(sum_combine)]
    }

    fn generator_targets(&self) -> Vec<TaskId> {
        vec![0]
    }

    fn footprint(&self, tile: u32) -> u64 {
        self.layout(tile, 0).1
    }

    fn make_tile(&self, info: &TileInfo) -> HistogramTile {
        HistogramTile {
            lo_bin: self.bins.start(info.index),
            col: self.graph.col_idx[self.edges(info.index)].to_vec(),
            hist: vec![0; self.bins.len(info.index) as usize],
            pos: 0,
            addr: self.layout(info.index, info.data_base).0,
        }
    }

    fn init(&self, st: &mut HistogramTile, ctx: &mut TaskCtx) -> bool {
        let n = self.graph.num_vertices();
        let nbins = self.bins.n as u32;
        while st.pos < st.col.len() {
            if !ctx.can_send() {
                return true;
            }
            ctx.load(st.addr.col + 4 * st.pos as u64);
            ctx.int(3);
            let b = oracle::bin_of(st.col[st.pos], n, nbins) as u64;
            ctx.send(self.bins.owner(b), 0, &[b, 1]);
            st.pos += 1;
        }
        false
    }

    fn task(&self, _id: TaskId, st: &mut HistogramTile, p: &[u64], ctx: &mut TaskCtx) {
        let li = (p[0] - st.lo_bin) as usize;
        let at = st.addr.hist + 4 * li as u64;
        ctx.int(2);
        ctx.load(at);
        st.hist[li] += p[1];
        ctx.store(at);
    }

    fn prefetch_addrs(&self, _id: TaskId, st: &HistogramTile, p: &[u64], out: &mut Vec<u64>) {
        out.push(st.addr.hist + 4 * (p[0] - st.lo_bin));
    }
}

impl Benchmark for Histogram {
    fn output(&self, tiles: &[HistogramTile]) -> Output {
        Output::Int(tiles.iter().flat_map(|t| t.hist.iter().copied()).collect())
    }

    fn reference(&self) -> Output {
        Output::Int(oracle::histogram(&self.graph, self.bins.n as u32))
    }

    fn label(&self) -> &'static str {
        "bin"
    }

    fn work(&self, _reference: &Output) -> Work {
        Work { items: self.graph.num_edges(), basis: "elements" }
    }
}
