//! BFS, SSSP and WCC as label-correcting relaxation over message-triggered
//! tasks. A relaxed vertex joins the tile's next frontier; frontiers are
//! expanded in epochs whose release depends on the barrier mode.

use std::sync::Arc;

use super::csr::CsrGraph;
use super::partition::{Layout, Partition};
use super::{oracle, Benchmark, Output, Work};
use crate::engine::{App, BarrierMode, TaskCtx, TaskDescriptor, TaskId, TileInfo};
use crate::noc::Payload;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelaxKind {
    Bfs,
    Sssp,
    Wcc,
}

/// Vertices expanded per epoch step before the PU is yielded.
const STEP_VERTICES: usize = 32;
const NO_EDGE: u64 = u64::MAX;

pub struct Relax {
    kind: RelaxKind,
    /// The traversed graph; symmetrized for WCC.
    graph: Arc<CsrGraph>,
    original: Arc<CsrGraph>,
    part: Partition,
    root: u32,
    barrier: BarrierMode,
}

#[derive(Debug, Default)]
struct Addrs {
    row_ptr: u64,
    col: u64,
    val: u64,
    dist: u64,
    frontier: u64,
}

pub struct RelaxTile {
    lo: u64,
    row_ptr: Vec<u64>,
    col: Vec<u32>,
    w: Vec<u32>,
    dist: Vec<u64>,
    current: Vec<u32>,
    pos: usize,
    edge: u64,
    next: Vec<u32>,
    queued: Vec<bool>,
    addr: Addrs,
}

fn min_combine(d: &mut Payload, s: &Payload) {
    if s[1] < d[1] {
        d[1] = s[1];
    }
}

impl Relax {
    pub fn new(kind: RelaxKind, graph: Arc<CsrGraph>, tiles: u32, root: u32, barrier: BarrierMode) -> Self {
        let traversed = match kind {
            RelaxKind::Wcc => Arc::new(graph.symmetrize()),
            _ => graph.clone(),
        };
        let part = Partition::new(graph.num_vertices() as u64, tiles);
        Relax { kind, graph: traversed, original: graph, part, root, barrier }
    }

    fn layout(&self, tile: u32, base: u64) -> (Addrs, u64) {
        let r = self.part.range(tile);
        let n = r.end - r.start;
        let nnz = if n == 0 { 0 } else { self.graph.row_ptr[r.end as usize] - self.graph.row_ptr[r.start as usize] };
        let mut l = Layout::default();
        let a = Addrs {
            row_ptr: l.array(base, n + 1, 8),
            col: l.array(base, nnz, 4),
            val: l.array(base, nnz, 4),
            dist: l.array(base, n, 4),
            frontier: l.array(base, n, 4),
        };
        (a, l.bytes())
    }
}

impl App for Relax {
    type Tile = RelaxTile;

    fn name(&self) -> &str {
        match self.kind {
            RelaxKind::Bfs => "bfs",
            RelaxKind::Sssp => "sssp",
            RelaxKind::Wcc => "wcc",
        }
    }

    fn tasks(&self) -> Vec<TaskDescriptor> {
        vec![TaskDescriptor::leaf(0, "relax", 64).with_combine(min_combine)]
    }

    fn generator_targets(&self) -> Vec<TaskId> {
        vec![0]
    }

    fn barrier(&self) -> BarrierMode {
        self.barrier
    }

    fn footprint(&self, tile: u32) -> u64 {
        self.layout(tile, 0).1
    }

    fn make_tile(&self, info: &TileInfo) -> RelaxTile {
        let r = self.part.range(info.index);
        let g = &self.graph;
        let (lo, hi) = (r.start as usize, r.end as usize);
        let (e0, e1) = (g.row_ptr[lo] as usize, g.row_ptr[hi] as usize);
        let n = hi - lo;
        RelaxTile {
            lo: r.start,
            row_ptr: g.row_ptr[lo..=hi].iter().map(|p| p - e0 as u64).collect(),
            col: g.col_idx[e0..e1].to_vec(),
            w: g.values[e0..e1].iter().map(|&w| w as u32).collect(),
            dist: match self.kind {
                RelaxKind::Wcc => (r.start..r.end).collect(),
                _ => vec![oracle::UNREACHED; n],
            },
            current: Vec::new(),
            pos: 0,
            edge: NO_EDGE,
            next: Vec::new(),
            queued: vec![false; n],
            addr: self.layout(info.index, info.data_base).0,
        }
    }

    fn init(&self, st: &mut RelaxTile, ctx: &mut TaskCtx) -> bool {
        match self.kind {
            RelaxKind::Wcc => {
                st.current = (0..st.dist.len() as u32).collect();
                for i in 0..st.dist.len() as u64 {
                    ctx.int(1);
                    ctx.store(st.addr.frontier + 4 * i);
                }
            }
            _ => {
                let root = self.root as u64;
                if (st.lo..st.lo + st.dist.len() as u64).contains(&root) {
                    let li = root - st.lo;
                    st.dist[li as usize] = 0;
                    st.current = vec![li as u32];
                    ctx.int(2);
                    ctx.store(st.addr.dist + 4 * li);
                }
            }
        }
        st.pos = 0;
        false
    }

    fn task(&self, _id: TaskId, st: &mut RelaxTile, p: &[u64], ctx: &mut TaskCtx) {
        let li = (p[0] - st.lo) as usize;
        ctx.int(2);
        ctx.load(st.addr.dist + 4 * li as u64);
        ctx.branch(1);
        if p[1] < st.dist[li] {
            st.dist[li] = p[1];
            ctx.store(st.addr.dist + 4 * li as u64);
            if !st.queued[li] {
                st.queued[li] = true;
                ctx.int(1);
                ctx.store(st.addr.frontier + 4 * st.next.len() as u64);
                st.next.push(li as u32);
            }
        }
    }

    fn has_epoch_work(&self, st: &RelaxTile) -> bool {
        st.pos < st.current.len()
    }

    fn has_deferred(&self, st: &RelaxTile) -> bool {
        !st.next.is_empty()
    }

    fn begin_epoch(&self, st: &mut RelaxTile) {
        st.current = std::mem::take(&mut st.next);
        for &u in &st.current {
            st.queued[u as usize] = false;
        }
        st.pos = 0;
        st.edge = NO_EDGE;
    }

    fn epoch_step(&self, st: &mut RelaxTile, ctx: &mut TaskCtx) {
        let a = &st.addr;
        for _ in 0..STEP_VERTICES {
            let Some(&u) = st.current.get(st.pos) else { return };
            let u = u as usize;
            if st.edge == NO_EDGE {
                ctx.load(a.frontier + 4 * st.pos as u64);
                ctx.load(a.row_ptr + 8 * u as u64);
                ctx.load(a.row_ptr + 8 * (u as u64 + 1));
                ctx.load(a.dist + 4 * u as u64);
                st.edge = st.row_ptr[u];
            }
            let d = st.dist[u];
            while st.edge < st.row_ptr[u + 1] {
                if !ctx.can_send() {
                    return;
                }
                let e = st.edge as usize;
                ctx.load(a.col + 4 * e as u64);
                let nd = match self.kind {
                    RelaxKind::Bfs => d + 1,
                    RelaxKind::Sssp => {
                        ctx.load(a.val + 4 * e as u64);
                        d + st.w[e] as u64
                    }
                    RelaxKind::Wcc => d,
                };
                let v = st.col[e] as u64;
                ctx.int(2);
                ctx.send(self.part.owner(v), 0, &[v, nd]);
                st.edge += 1;
            }
            ctx.branch(1);
            st.pos += 1;
            st.edge = NO_EDGE;
        }
    }

    fn prefetch_addrs(&self, _id: TaskId, st: &RelaxTile, p: &[u64], out: &mut Vec<u64>) {
        out.push(st.addr.dist + 4 * (p[0] - st.lo));
    }
}

impl Benchmark for Relax {
    fn output(&self, tiles: &[RelaxTile]) -> Output {
        Output::Int(tiles.iter().flat_map(|t| t.dist.iter().copied()).collect())
    }

    fn reference(&self) -> Output {
        Output::Int(match self.kind {
            RelaxKind::Bfs => oracle::bfs(&self.original, self.root),
            RelaxKind::Sssp => oracle::sssp(&self.original, self.root),
            RelaxKind::Wcc => oracle::wcc(&self.original),
        })
    }

    fn label(&self) -> &'static str {
        "vertex"
    }

    fn work(&self, reference: &Output) -> Work {
        match (self.kind, reference) {
            (RelaxKind::Wcc, _) => Work { items: self.original.num_edges(), basis: "edges per sweep" },
            (_, Output::Int(d)) => Work {
                items: (0..self.original.num_vertices())
                    .filter(|&v| d[v as usize] != oracle::UNREACHED)
                    .map(|v| self.original.degree(v))
                    .sum(),
                basis: "edges reachable from the root",
            },
            _ => Work { items: 0, basis: "edges reachable from the root" },
        }
    }
}
