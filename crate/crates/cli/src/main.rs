//! `manysim` command-line driver.
//!
//! Every flag can also be given through an environment variable named
//! `MANYSIM_<FLAG>`, e.g. `MANYSIM_WORKERS=4`.

mod log;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use manysim::apps::{run_app, AppKind, AppParams, Dataset};
use manysim::archmodel::{parse_with_overrides, split_override};
use manysim::energycost::{compute_reports, postprocess, CounterSet};
use manysim::engine::{frame_cycles, BarrierMode, SimOptions};

#[derive(Parser)]
#[command(name = "manysim", version, about = "Tiled manycore architecture simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one application on one dataset.
    Run(RunArgs),
    /// Recompute energy, area and cost reports from a counters file.
    Postprocess(PostArgs),
}

#[derive(Args)]
struct RunArgs {
    /// bfs, sssp, pagerank, wcc, spmv, spmm, histogram or fft.
    #[arg(long, env = "MANYSIM_APP")]
    app: AppKind,
    /// rmat:<scale>[:<edge factor>], hand, csr:<path>, edges:<path> or tensor:<n>.
    #[arg(long, env = "MANYSIM_DATASET")]
    dataset: Dataset,
    /// Machine configuration file; built-in defaults when omitted.
    #[arg(long, env = "MANYSIM_CONFIG")]
    config: Option<PathBuf>,
    /// Host worker threads; defaults to host parallelism capped at grid columns.
    #[arg(long, env = "MANYSIM_WORKERS")]
    workers: Option<usize>,
    #[arg(long, short, env = "MANYSIM_VERBOSITY", default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=3))]
    verbosity: u8,
    /// Frame interval in microseconds of simulated time.
    #[arg(long, env = "MANYSIM_FRAME_US")]
    frame_us: Option<f64>,
    /// Configuration override `key=value`; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", env = "MANYSIM_SET", value_delimiter = ',')]
    set: Vec<String>,
    /// Drop message headers (wafer-scale mode).
    #[arg(long, env = "MANYSIM_NO_HEADER")]
    no_header: bool,
    #[arg(long, env = "MANYSIM_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long, env = "MANYSIM_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
    /// Search root for bfs and sssp.
    #[arg(long, env = "MANYSIM_ROOT")]
    root: Option<u32>,
    /// none, local or global.
    #[arg(long, env = "MANYSIM_BARRIER", default_value = "none")]
    barrier: BarrierMode,
    /// PageRank iterations.
    #[arg(long, env = "MANYSIM_ITERS", default_value_t = 10)]
    iters: u32,
    /// Dense operand columns for spmm.
    #[arg(long, env = "MANYSIM_COLS", default_value_t = 4)]
    cols: usize,
    /// Histogram bins.
    #[arg(long, env = "MANYSIM_BINS")]
    bins: Option<u32>,
}

#[derive(Args)]
struct PostArgs {
    /// Counters file written by `run`.
    counters: PathBuf,
    /// Configuration the run used.
    config: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE", env = "MANYSIM_SET", value_delimiter = ',')]
    set: Vec<String>,
    /// Write the report here instead of standard output.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn overrides(set: &[String]) -> Result<Vec<(String, String)>> {
    set.iter().map(|s| split_override(s).with_context(|| format!("--set {s}"))).collect()
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(a: RunArgs) -> Result<ExitCode> {
    let text = match &a.config {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let mut ov = overrides(&a.set)?;
    if let Some(us) = a.frame_us {
        ov.push(("frame_interval_us".into(), us.to_string()));
    }
    if a.no_header {
        ov.push(("no_header".into(), "true".into()));
    }
    let cfg = parse_with_overrides(&text, &ov).context("configuration")?;
    let m = &cfg.machine;
    let (gw, gh) = m.global_grid();
    let workers = match a.workers {
        Some(0) => bail!("--workers must be at least 1"),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()).min(gw as usize),
    };
    let opts = SimOptions {
        workers,
        frame_cycles: (a.verbosity >= 1).then(|| frame_cycles(m, m.frame_interval_us)),
        track_queues: a.verbosity >= 3,
    };
    let params = AppParams {
        root: a.root,
        barrier: a.barrier,
        iters: a.iters,
        cols: a.cols,
        bins: a.bins,
        seed: a.seed,
        ..AppParams::default()
    };

    let start = Instant::now();
    let run = run_app(a.app, &a.dataset, &cfg, &opts, &params).with_context(|| format!("{} on {}", a.app, a.dataset))?;
    let wall_s = start.elapsed().as_secs_f64();

    let reports = compute_reports(&run.sim.counters, &cfg).context("reports")?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let out = |name: &str| a.out_dir.join(name);
    write_file(&out("config.txt"), &cfg.to_config_string())?;
    run.sim.counters.write(&out("counters.txt")).context("writing counters")?;
    write_file(&out("report.txt"), &reports.render())?;

    let app = a.app.to_string();
    let dataset = a.dataset.to_string();
    let info = log::RunInfo { app: &app, dataset: &dataset, grid: (gw, gh), seed: a.seed, workers, verbosity: a.verbosity };
    let path = out("run.log");
    let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    log::write_log(&mut w, &info, &run).and_then(|_| w.flush()).with_context(|| format!("writing {}", path.display()))?;
    let summary = log::summary(&info, &run, &reports.key_values(), wall_s);
    write_file(&out("summary.json"), &serde_json::to_string_pretty(&summary)?)?;

    let mm = &run.metrics;
    println!(
        "{app} {dataset} {gw}x{gh}: {} cycles, {:.6e} s, {:.4e} per s ({})",
        mm.noc_cycles, mm.runtime_s, mm.teps, mm.work.basis
    );
    match &run.check {
        Ok(()) => Ok(ExitCode::SUCCESS),
        Err(e) => {
            eprintln!("check failed: {e}");
            Ok(ExitCode::from(1))
        }
    }
}

fn post(a: PostArgs) -> Result<ExitCode> {
    let cs = CounterSet::read(&a.counters).with_context(|| format!("reading {}", a.counters.display()))?;
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let reports = postprocess(&cs, &text, &overrides(&a.set)?).context("postprocess")?;
    let r = reports.render();
    match &a.output {
        Some(p) => write_file(p, &r)?,
        None => print!("{r}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run(a) => run(a),
        Cmd::Postprocess(a) => post(a),
    };
    match res {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
