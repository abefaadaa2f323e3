//! Benchmark applications, datasets, reference checking and metrics.

pub mod compare;
pub mod csr;
pub mod fft3d;
pub mod histogram;
pub mod oracle;
pub mod pagerank;
pub mod partition;
pub mod relax;
pub mod rmat;
pub mod spmv;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

pub use compare::{compare_out, CompareError, Output};
pub use csr::CsrGraph;
pub use partition::Partition;
pub use rmat::rmat_generate;

use crate::archmodel::Config;
use crate::engine::{self, App, BarrierMode, EngineError, SimOptions, SimResult};

#[derive(Debug, Error)]
pub enum AppError {
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Amount of work a run performed, for throughput metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Work {
    pub items: u64,
    /// What `items` counts.
    pub basis: &'static str,
}

/// An application whose result can be checked against a host reference.
pub trait Benchmark: App {
    fn output(&self, tiles: &[Self::Tile]) -> Output;
    fn reference(&self) -> Output;
    /// Name of one output element in mismatch reports.
    fn label(&self) -> &'static str;
    fn work(&self, reference: &Output) -> Work;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppKind {
    Bfs,
    Sssp,
    PageRank,
    Wcc,
    Spmv,
    Spmm,
    Fft3d,
    Histogram,
}

impl AppKind {
    pub const ALL: [AppKind; 8] = [
        AppKind::Bfs,
        AppKind::Sssp,
        AppKind::PageRank,
        AppKind::Wcc,
        AppKind::Spmv,
        AppKind::Spmm,
        AppKind::Fft3d,
        AppKind::Histogram,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AppKind::Bfs => "bfs",
            AppKind::Sssp => "sssp",
            AppKind::PageRank => "pagerank",
            AppKind::Wcc => "wcc",
            AppKind::Spmv => "spmv",
            AppKind::Spmm => "spmm",
            AppKind::Fft3d => "fft3d",
            AppKind::Histogram => "histogram",
        }
    }
}

impl fmt::Display for AppKind {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AppKind {
    type Err = AppError;
    fn from_str(s: &str) -> Result<Self, AppError> {
        let s = s.to_ascii_lowercase();
        AppKind::ALL
            .into_iter()
            .find(|k| k.name() == s || (s == "fft" && *k == AppKind::Fft3d) || (s == "histo" && *k == AppKind::Histogram))
            .ok_or_else(|| AppError::Params(format!("unknown app `{s}`")))
    }
}

/// Where the input comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Dataset {
    Rmat { scale: u32, edge_factor: u32 },
    /// The built-in 64-vertex graph.
    Hand,
    Csr(PathBuf),
    EdgeList(PathBuf),
    /// Random `n^3` tensor for the FFT.
    Tensor { n: usize },
}

impl FromStr for Dataset {
    type Err = AppError;
    /// `rmat:<scale>[:<edge factor>]`, `hand`, `csr:<path>`, `edges:<path>`
    /// or `tensor:<n>`.
    fn from_str(s: &str) -> Result<Self, AppError> {
        let bad = || AppError::Dataset(format!("cannot parse dataset `{s}`"));
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        match kind.to_ascii_lowercase().as_str() {
            "hand" => Ok(Dataset::Hand),
            "rmat" => {
                let mut it = rest.split(':');
                let scale = it.next().and_then(|x| x.parse().ok()).ok_or_else(bad)?;
                let edge_factor = match it.next() {
                    Some(e) => e.parse().map_err(|_| bad())?,
                    None => 16,
                };
                if !(1..=30).contains(&scale) {
                    return Err(AppError::Dataset("RMAT scale must be in 1..=30".into()));
                }
                Ok(Dataset::Rmat { scale, edge_factor })
            }
            "csr" if !rest.is_empty() => Ok(Dataset::Csr(rest.into())),
            "edges" if !rest.is_empty() => Ok(Dataset::EdgeList(rest.into())),
            "tensor" => Ok(Dataset::Tensor { n: rest.parse().map_err(|_| bad())? }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        match self {
            Dataset::Rmat { scale, edge_factor: 16 } => write!(f, "rmat:{scale}"),
            Dataset::Rmat { scale, edge_factor } => write!(f, "rmat:{scale}:{edge_factor}"),
            Dataset::Hand => f.write_str("hand"),
            Dataset::Csr(p) => write!(f, "csr:{}", p.display()),
            Dataset::EdgeList(p) => write!(f, "edges:{}", p.display()),
            Dataset::Tensor { n } => write!(f, "tensor:{n}"),
        }
    }
}

impl Dataset {
    pub fn load_graph(&self, seed: u64) -> Result<CsrGraph, AppError> {
        match self {
            Dataset::Rmat { scale, edge_factor } => Ok(rmat_generate(*scale, *edge_factor, seed)),
            Dataset::Hand => Ok(CsrGraph::hand_graph()),
            Dataset::Csr(p) => CsrGraph::load(p),
            Dataset::EdgeList(p) => CsrGraph::load_edge_list(p),
            Dataset::Tensor { .. } => Err(AppError::Dataset("a tensor is not a graph".into())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AppParams {
    /// Search root; defaults to the first vertex with out-edges.
    pub root: Option<u32>,
    pub barrier: BarrierMode,
    pub iters: u32,
    pub damping: f64,
    /// Columns of the dense SPMM operand.
    pub cols: usize,
    /// Histogram bins; defaults to one per vertex, capped at 1024.
    pub bins: Option<u32>,
    pub seed: u64,
}

impl Default for AppParams {
    fn default() -> Self {
        AppParams { root: None, barrier: BarrierMode::None, iters: 10, damping: 0.85, cols: 4, bins: None, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub runtime_s: f64,
    pub noc_cycles: u64,
    pub work: Work,
    /// `work.items / runtime_s`.
    pub teps: f64,
    pub flops: f64,
    pub hit_rate: f64,
    pub pu_utilization: f64,
    /// Flit hops per level: on-chip, chiplet, package, node crossings.
    pub flit_hops: [u64; 4],
}

impl RunMetrics {
    pub fn new(sim: &SimResult<()>, cfg: &Config, work: Work) -> Self {
        let c = &sim.counters;
        let runtime_s = sim.runtime_s();
        let per_s = |x: f64| if runtime_s > 0.0 { x / runtime_s } else { 0.0 };
        let pus = cfg.machine.tile_count() as f64 * cfg.machine.pus_per_tile as f64;
        let pu_cycles = c.pu_cycles as f64 * pus;
        RunMetrics {
            runtime_s,
            noc_cycles: sim.cycles,
            work,
            teps: per_s(work.items as f64),
            flops: per_s(c.get("inst.fp") as f64),
            hit_rate: sim.hit_rate(),
            pu_utilization: if pu_cycles > 0.0 { c.get("pu.busy_cycles") as f64 / pu_cycles } else { 0.0 },
            flit_hops: [c.get("hops.noc"), c.get("hops.chiplet"), c.get("hops.package"), c.get("hops.node")],
        }
    }
}

/// Outcome of one checked run.
#[derive(Debug)]
pub struct AppRun {
    pub app: AppKind,
    pub sim: SimResult<()>,
    pub check: Result<(), CompareError>,
    pub metrics: RunMetrics,
}

fn execute<B: Benchmark>(kind: AppKind, b: &B, cfg: &Config, opts: &SimOptions) -> Result<AppRun, AppError> {
    let (tiles, sim) = engine::run(b, cfg, opts)?.into_parts();
    let reference = b.reference();
    let check = compare_out(&b.output(&tiles), &reference, b.label());
    let metrics = RunMetrics::new(&sim, cfg, b.work(&reference));
    Ok(AppRun { app: kind, sim, check, metrics })
}

/// Side of the FFT tensor for a dataset and grid.
pub fn fft_size(dataset: &Dataset, cfg: &Config) -> Result<usize, AppError> {
    let tiles = cfg.machine.tile_count();
    let n = match dataset {
        Dataset::Tensor { n } => *n,
        _ => (tiles as f64).sqrt().round() as usize,
    };
    if (n * n) as u64 != tiles {
        return Err(AppError::Params(format!("fft3d of a {n}^3 tensor needs {} tiles, the grid has {tiles}", n * n)));
    }
    Ok(n)
}

/// Build `kind` on `dataset`, simulate it and check the result.
pub fn run_app(kind: AppKind, dataset: &Dataset, cfg: &Config, opts: &SimOptions, p: &AppParams) -> Result<AppRun, AppError> {
    let tiles = cfg.machine.tile_count() as u32;
    if kind == AppKind::Fft3d {
        let n = fft_size(dataset, cfg)?;
        let app = fft3d::Fft3d::new(n, fft3d::random_tensor(n, p.seed));
        return execute(kind, &app, cfg, opts);
    }
    let g = Arc::new(dataset.load_graph(p.seed)?);
    if g.num_vertices() == 0 {
        return Err(AppError::Dataset("graph has no vertices".into()));
    }
    let root = match p.root {
        Some(r) if r >= g.num_vertices() => {
            return Err(AppError::Params(format!("root {r} out of range (graph has {} vertices)", g.num_vertices())))
        }
        Some(r) => r,
        None => (0..g.num_vertices()).find(|&v| g.degree(v) > 0).unwrap_or(0),
    };
    match kind {
        AppKind::Bfs | AppKind::Sssp | AppKind::Wcc => {
            let rk = match kind {
                AppKind::Bfs => relax::RelaxKind::Bfs,
                AppKind::Sssp => relax::RelaxKind::Sssp,
                _ => relax::RelaxKind::Wcc,
            };
            execute(kind, &relax::Relax::new(rk, g, tiles, root, p.barrier), cfg, opts)
        }
        AppKind::PageRank => execute(kind, &pagerank::PageRank::new(g, tiles, p.iters, p.damping), cfg, opts),
        AppKind::Spmv | AppKind::Spmm => {
            let cols = if kind == AppKind::Spmv { 1 } else { p.cols };
            if !(1..=16).contains(&cols) {
                return Err(AppError::Params("SPMM columns must be in 1..=16".into()));
            }
            let x = spmv::dense_operand(g.num_vertices(), cols);
            execute(kind, &spmv::Spmv::new(g, tiles, cols, x), cfg, opts)
        }
        AppKind::Histogram => {
            let bins = p.bins.unwrap_or(g.num_vertices().min(1024));
            if bins == 0 {
                return Err(AppError::Params("histogram needs at least one bin".into()));
            }
            execute(kind, &histogram::Histogram::new(g, tiles, bins), cfg, opts)
        }
        AppKind::Fft3d => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn app_names_round_trip() {
        for k in AppKind::ALL {
            assert_eq!(k.name().parse::<AppKind>().unwrap(), k);
        }
        assert!("nope".parse::<AppKind>().is_err());
    }

    #[test]
    fn dataset_syntax() {
        assert_eq!("rmat:16".parse::<Dataset>().unwrap(), Dataset::Rmat { scale: 16, edge_factor: 16 });
        assert_eq!("rmat:10:8".parse::<Dataset>().unwrap(), Dataset::Rmat { scale: 10, edge_factor: 8 });
        assert_eq!("hand".parse::<Dataset>().unwrap(), Dataset::Hand);
        assert_eq!("tensor:8".parse::<Dataset>().unwrap(), Dataset::Tensor { n: 8 });
        assert!("rmat:x".parse::<Dataset>().is_err());
        assert!("csr:".parse::<Dataset>().is_err());
        for s in ["rmat:16", "rmat:10:8", "hand", "tensor:8", "csr:a.bin"] {
            assert_eq!(s.parse::<Dataset>().unwrap().to_string(), s);
        }
    }
}
