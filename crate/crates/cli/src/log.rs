//! Run log and summary sidecar.
//!
//! The log is line oriented. Every verbosity level adds records to those of
//! the level below and never changes them:
//!
//! ```text
//! RUN app=<app> dataset=<dataset> grid=<w>x<h> seed=<seed>          (v >= 0)
//! FRAMES count=<n> cycles=<frame cycles> period_ps=<noc period>   (v >= 1)
//! FRAME <idx> * * <counter>=<value> ...                           (v >= 1)
//! FRAME <idx> <tile_x> <tile_y> <counter>=<value> ...             (v >= 2)
//! QUEUE <idx> <tile_x> <tile_y> iq.<task>=<max> cq.<task>=<max>   (v >= 3)
//! SUMMARY <metric>=<value> ...                                    (v >= 0)
//! ```
//!
//! Records are ordered by frame, then by tile in row-major order, with the
//! whole-machine `* *` record first. Counter values are totals over the
//! frame; `busy_ps` is PU busy time in picoseconds summed over the tile's
//! PUs, `router_active` the number of cycles in which the router moved a
//! message.

use std::io::{self, Write};

use manysim::apps::AppRun;
use manysim::engine::FrameStats;
use serde_json::{json, Value};

pub struct RunInfo<'a> {
    pub app: &'a str,
    pub dataset: &'a str,
    pub grid: (u32, u32),
    pub seed: u64,
    pub workers: usize,
    pub verbosity: u8,
}

/// Number of frames covering `cycles`.
pub fn frame_count(cycles: u64, frame_cycles: u64) -> u64 {
    if frame_cycles == 0 {
        0
    } else {
        cycles.div_ceil(frame_cycles).max(1)
    }
}

fn frame_fields(f: &FrameStats) -> String {
    format!(
        "busy_ps={} router_active={} injected={} ejected={} tasks={} flit_hops={} stalls={} dram_reqs={}",
        f.pu_busy_ps, f.router_active, f.injected, f.ejected, f.tasks, f.flit_hops, f.stalls, f.dram_reqs
    )
}

fn metric_fields(run: &AppRun) -> Vec<(&'static str, String)> {
    let m = &run.metrics;
    vec![
        ("noc_cycles", m.noc_cycles.to_string()),
        ("runtime_s", m.runtime_s.to_string()),
        ("work", m.work.items.to_string()),
        ("teps", m.teps.to_string()),
        ("flops", m.flops.to_string()),
        ("hit_rate", m.hit_rate.to_string()),
        ("pu_utilization", m.pu_utilization.to_string()),
        ("hops_noc", m.flit_hops[0].to_string()),
        ("hops_chiplet", m.flit_hops[1].to_string()),
        ("hops_package", m.flit_hops[2].to_string()),
        ("hops_node", m.flit_hops[3].to_string()),
        ("check", if run.check.is_ok() { "pass".into() } else { "fail".into() }),
    ]
}

pub fn write_log(w: &mut impl Write, info: &RunInfo, run: &AppRun) -> io::Result<()> {
    let sim = &run.sim;
    let (gw, gh) = info.grid;
    writeln!(w, "RUN app={} dataset={} grid={gw}x{gh} seed={}", info.app, info.dataset, info.seed)?;
    if info.verbosity >= 1 {
        let frames = frame_count(sim.cycles, sim.frame_cycles);
        writeln!(w, "FRAMES count={frames} cycles={} period_ps={}", sim.frame_cycles, sim.noc_period_ps)?;
        let empty = FrameStats::default();
        let at = |t: usize, f: usize| sim.frames[t].get(f).unwrap_or(&empty);
        for f in 0..frames as usize {
            let mut total = FrameStats::default();
            for t in 0..sim.frames.len() {
                total.add(at(t, f));
            }
            writeln!(w, "FRAME {f} * * {}", frame_fields(&total))?;
            if info.verbosity < 2 {
                continue;
            }
            for t in 0..sim.frames.len() {
                let (x, y) = (t as u32 % gw, t as u32 / gw);
                writeln!(w, "FRAME {f} {x} {y} {}", frame_fields(at(t, f)))?;
            }
            if info.verbosity < 3 {
                continue;
            }
            for t in 0..sim.frames.len() {
                let (x, y) = (t as u32 % gw, t as u32 / gw);
                let fs = at(t, f);
                write!(w, "QUEUE {f} {x} {y}")?;
                for (i, name) in sim.task_names.iter().enumerate() {
                    let iq = fs.iq_max.get(i).copied().unwrap_or(0);
                    let cq = fs.cq_max.get(i).copied().unwrap_or(0);
                    write!(w, " iq.{name}={iq} cq.{name}={cq}")?;
                }
                writeln!(w)?;
            }
        }
    }
    write!(w, "SUMMARY")?;
    for (k, v) in metric_fields(run) {
        write!(w, " {k}={v}")?;
    }
    writeln!(w)
}

fn scalar(v: &str) -> Value {
    if let Ok(i) = v.parse::<u64>() {
        Value::from(i)
    } else if let Ok(f) = v.parse::<f64>() {
        Value::from(f)
    } else {
        Value::from(v)
    }
}

/// Machine-readable summary of a run.
pub fn summary(info: &RunInfo, run: &AppRun, report: &[(String, String)], wall_s: f64) -> Value {
    let sim = &run.sim;
    let mut metrics = serde_json::Map::new();
    for (k, v) in metric_fields(run) {
        metrics.insert(k.into(), scalar(&v));
    }
    metrics.insert("work_basis".into(), run.metrics.work.basis.into());
    let report: serde_json::Map<String, Value> = report
        .iter()
        .map(|(k, v)| (k.clone(), scalar(v)))
        .collect();
    json!({
        "app": info.app,
        "dataset": info.dataset,
        "grid": [info.grid.0, info.grid.1],
        "seed": info.seed,
        "workers": info.workers,
        "verbosity": info.verbosity,
        "kernel_cycles": sim.kernel_cycles,
        "global_epochs": sim.global_epochs,
        "frames": frame_count(sim.cycles, sim.frame_cycles),
        "frame_cycles": sim.frame_cycles,
        "noc_period_ps": sim.noc_period_ps,
        "metrics": metrics,
        "check": match &run.check {
            Ok(()) => Value::Null,
            Err(e) => Value::from(e.to_string()),
        },
        "report": report,
        "wall_s": wall_s,
    })
}
