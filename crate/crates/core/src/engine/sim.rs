//! Lock-step parallel simulation of the tile grid.
//!
//! Every NoC cycle has two parallel phases over column slices of the grid.
//! Phase A advances each tile on its own: PUs start tasks whose start time
//! falls inside the cycle, then the router moves messages and writes what it
//! sends into the tile's outbox. Phase B lets every tile pull the messages and
//! credits its neighbours produced. Links therefore have a lookahead of one
//! cycle whether or not they cross a worker boundary, which makes the result
//! independent of the worker count. DRAM channel reservations are merged
//! serially in tile order between the phases.

use std::collections::VecDeque;

use rayon::prelude::*;

use super::termination::{epoch_barrier, BarrierScope, TerminationDetector};
use super::tsu::{schedule_next, QueueView};
use super::{check_task_graph, App, BarrierMode, EngineError, Emit, InstCounters, TaskCtx, TaskDescriptor, TaskId, TileInfo};
use crate::archmodel::{Config, MachineConfig, TileCoord, TsuPolicy};
use crate::energycost::{tile_side_mm, CounterSet};
use crate::memory::{dram_request, AccessClock, DramChannelState, DramPort, MemCounters, TileMemory};
use crate::noc::{build_geometry, message_words, opposite, CombineFn, Msg, NocCounters, NocParams, Outbox, Payload, Router, TileGeom, MAX_PORTS, NO_TILE};

/// Messages a generator step may emit before yielding the PU.
const GEN_BATCH: u32 = 16;

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub workers: usize,
    /// Frame length in NoC cycles; `None` disables frame statistics.
    pub frame_cycles: Option<u64>,
    /// Record queue occupancies in frames.
    pub track_queues: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { workers: 1, frame_cycles: None, track_queues: false }
    }
}

/// Activity of one tile during one frame.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrameStats {
    pub pu_busy_ps: u64,
    pub router_active: u64,
    pub injected: u64,
    pub ejected: u64,
    pub tasks: u64,
    pub flit_hops: u64,
    pub stalls: u64,
    pub dram_reqs: u64,
    /// Peak input and channel queue occupancy per task.
    pub iq_max: Vec<u32>,
    pub cq_max: Vec<u32>,
}

impl FrameStats {
    pub fn add(&mut self, o: &FrameStats) {
        self.pu_busy_ps += o.pu_busy_ps;
        self.router_active += o.router_active;
        self.injected += o.injected;
        self.ejected += o.ejected;
        self.tasks += o.tasks;
        self.flit_hops += o.flit_hops;
        self.stalls += o.stalls;
        self.dram_reqs += o.dram_reqs;
        if self.iq_max.len() < o.iq_max.len() {
            self.iq_max.resize(o.iq_max.len(), 0);
            self.cq_max.resize(o.cq_max.len(), 0);
        }
        for (a, b) in self.iq_max.iter_mut().zip(&o.iq_max) {
            *a = (*a).max(*b);
        }
        for (a, b) in self.cq_max.iter_mut().zip(&o.cq_max) {
            *a = (*a).max(*b);
        }
    }
}

#[derive(Debug)]
pub struct SimResult<T> {
    /// Total runtime in NoC cycles.
    pub cycles: u64,
    pub kernel_cycles: Vec<u64>,
    pub global_epochs: u64,
    pub counters: CounterSet,
    /// Application state per tile, row-major.
    pub tiles: Vec<T>,
    /// Frame statistics per tile, row-major.
    pub frames: Vec<Vec<FrameStats>>,
    pub frame_cycles: u64,
    pub noc_period_ps: u64,
    pub pu_period_ps: u64,
    /// Task names in task ID order.
    pub task_names: Vec<&'static str>,
}

impl<T> SimResult<T> {
    pub fn hit_rate(&self) -> f64 {
        let h = self.counters.get("mem.hits");
        let m = self.counters.get("mem.misses");
        if h + m == 0 {
            1.0
        } else {
            h as f64 / (h + m) as f64
        }
    }

    /// Split off the per-tile application states.
    pub fn into_parts(self) -> (Vec<T>, SimResult<()>) {
        let rest = SimResult {
            cycles: self.cycles,
            kernel_cycles: self.kernel_cycles,
            global_epochs: self.global_epochs,
            counters: self.counters,
            tiles: Vec::new(),
            frames: self.frames,
            frame_cycles: self.frame_cycles,
            noc_period_ps: self.noc_period_ps,
            pu_period_ps: self.pu_period_ps,
            task_names: self.task_names,
        };
        (self.tiles, rest)
    }

    pub fn runtime_s(&self) -> f64 {
        self.cycles as f64 * self.noc_period_ps as f64 * 1e-12
    }
}

#[derive(Debug, Clone)]
struct IqEntry {
    payload: Payload,
    ready_ps: u64,
}

#[derive(Debug, Default)]
struct TileCtr {
    noc: NocCounters,
    inst: InstCounters,
    tasks: Vec<u64>,
    local: Vec<u64>,
    init_steps: u64,
    epoch_steps: u64,
    queue_read_bits: u64,
    queue_write_bits: u64,
    pu_busy_ps: u64,
    pu_blocked_ps: u64,
}

struct Tile<T> {
    rm: u32,
    coord: TileCoord,
    st: T,
    pus: Vec<u64>,
    blocked: Vec<Option<u64>>,
    iqs: Vec<VecDeque<IqEntry>>,
    cqs: Vec<VecDeque<Msg>>,
    pending: VecDeque<Emit>,
    router: Router,
    mem: TileMemory,
    cursor: usize,
    init_pending: bool,
    wake: u64,
    quiet: u64,
    progress: bool,
    ctr: TileCtr,
    frames: Vec<FrameStats>,
    emits: Vec<Emit>,
    ejected: Vec<Msg>,
    prefetch: Vec<u64>,
    iq_free: Vec<u32>,
    error: Option<EngineError>,
}

enum Work {
    Task(usize),
    Init(u32),
    Epoch(u32),
}

/// Read-only state shared by all workers.
struct Shared<'a, A: App> {
    app: &'a A,
    tasks: &'a [TaskDescriptor],
    np: NocParams<'a>,
    geoms: &'a [TileGeom],
    tn: u64,
    tp: u64,
    grid_w: u32,
    iq_cap: Vec<u32>,
    cq_cap: u32,
    words: Vec<u16>,
    bits: Vec<u64>,
    gen_targets: Vec<TaskId>,
    barrier: BarrierMode,
    frame_cycles: Option<u64>,
    track_queues: bool,
    kernel: u32,
    policy: &'a TsuPolicy,
    clk: AccessClock,
}

/// Compact per-tile scheduling state, kept apart from the tiles so that
/// idle tiles cost one cache line per few tiles to skip.
#[derive(Debug, Clone, Copy, Default)]
struct Flags {
    wake: u64,
    /// The outbox holds messages or credits from this cycle.
    sent: bool,
    /// A neighbour sent something this way.
    recv: bool,
    /// DRAM requests are waiting for the serial merge.
    issued: bool,
}

fn frame_at(frames: &mut Vec<FrameStats>, idx: u64) -> &mut FrameStats {
    let i = idx as usize;
    if frames.len() <= i {
        frames.resize(i + 1, FrameStats::default());
    }
    &mut frames[i]
}

impl<A: App> Shared<'_, A> {
    fn coord_of(&self, rm: u32) -> TileCoord {
        TileCoord::new(rm % self.grid_w, rm / self.grid_w)
    }

    fn cq_free(&self, t: &Tile<A::Tile>, task: TaskId) -> u32 {
        self.cq_cap.saturating_sub(t.cqs[task as usize].len() as u32)
    }

    fn gen_budget(&self, t: &Tile<A::Tile>) -> u32 {
        if self.gen_targets.is_empty() {
            return u32::MAX;
        }
        let free = self.gen_targets.iter().map(|&g| self.cq_free(t, g)).min().unwrap_or(0);
        free.min(GEN_BATCH)
    }

    fn gate_ok(&self, t: &Tile<A::Tile>, task: usize) -> bool {
        let d = &self.tasks[task];
        d.max_emit == 0 || d.targets.iter().all(|&g| self.cq_free(t, g) >= d.max_emit.min(self.cq_cap))
    }

    fn add_busy(&self, t: &mut Tile<A::Tile>, start: u64, end: u64) {
        t.ctr.pu_busy_ps += end - start;
        let Some(fc) = self.frame_cycles else { return };
        let fps = fc * self.tn;
        let mut s = start;
        while s < end {
            let f = s / fps;
            let e = end.min((f + 1) * fps);
            frame_at(&mut t.frames, f).pu_busy_ps += e - s;
            s = e;
        }
    }

    fn push_cq(&self, t: &mut Tile<A::Tile>, e: Emit, min_cycle: u64) {
        let task = e.task as usize;
        t.ctr.queue_write_bits += self.bits[task];
        t.cqs[task].push_back(Msg {
            payload: e.payload,
            ts: e.emit_ps.div_ceil(self.tn).max(min_cycle),
            dest: self.coord_of(e.dest),
            channel: e.task,
            words: self.words[task],
            count: 1,
            hops: 0,
            out: 0,
        });
    }

    /// Place emitted messages into local input queues or channel queues;
    /// whatever does not fit waits in the pending list.
    fn deliver(&self, t: &mut Tile<A::Tile>, emits: &mut Vec<Emit>, cycle: u64) {
        for e in emits.drain(..) {
            let task = e.task as usize;
            if !t.pending.is_empty() {
                t.pending.push_back(e);
            } else if e.dest == t.rm && (t.iqs[task].len() as u32) < self.iq_cap[task] {
                t.ctr.local[task] += 1;
                t.ctr.queue_write_bits += self.bits[task];
                t.iqs[task].push_back(IqEntry { payload: e.payload, ready_ps: e.emit_ps });
            } else if (t.cqs[task].len() as u32) < self.cq_cap {
                self.push_cq(t, e, cycle);
            } else {
                t.pending.push_back(e);
            }
        }
    }

    fn drain_pending(&self, t: &mut Tile<A::Tile>, c: u64) {
        while let Some(e) = t.pending.front() {
            let task = e.task as usize;
            if e.dest == t.rm && (t.iqs[task].len() as u32) < self.iq_cap[task] {
                let e = t.pending.pop_front().unwrap();
                t.ctr.local[task] += 1;
                t.ctr.queue_write_bits += self.bits[task];
                t.iqs[task].push_back(IqEntry { payload: e.payload, ready_ps: e.emit_ps.max(c * self.tn) });
            } else if (t.cqs[task].len() as u32) < self.cq_cap {
                let e = t.pending.pop_front().unwrap();
                self.push_cq(t, e, c);
            } else {
                break;
            }
        }
        if t.pending.is_empty() {
            let now = (c + 1) * self.tn;
            for i in 0..t.pus.len() {
                if let Some(since) = t.blocked[i].take() {
                    t.ctr.pu_blocked_ps += now.saturating_sub(since);
                    t.pus[i] = t.pus[i].max(now);
                }
            }
        }
    }

    fn tile_idle(&self, t: &Tile<A::Tile>) -> bool {
        t.iqs.iter().all(|q| q.is_empty()) && t.cqs.iter().all(|q| q.is_empty()) && t.pending.is_empty()
    }

    fn choose(&self, t: &mut Tile<A::Tile>, pu: usize, t0: u64, cyc_end: u64) -> Option<(Work, u64)> {
        let n = self.tasks.len();
        let mut views = [QueueView { len: 0, cap: 0, eligible: false }; 16];
        let mut views_vec;
        let views: &mut [QueueView] = if n <= 16 {
            &mut views[..n]
        } else {
            views_vec = vec![QueueView { len: 0, cap: 0, eligible: false }; n];
            &mut views_vec
        };
        let mut any = false;
        for (i, v) in views.iter_mut().enumerate() {
            let q = &t.iqs[i];
            v.len = q.len() as u32;
            v.cap = self.iq_cap[i];
            v.eligible = q.front().is_some_and(|e| e.ready_ps < cyc_end) && self.gate_ok(t, i);
            any |= v.eligible;
        }
        if any {
            let ids: Vec<u16> = (0..n as u16).collect();
            if let Some(i) = schedule_next(self.policy, &mut t.cursor, views, &ids) {
                let ready = t.iqs[i].front().unwrap().ready_ps;
                return Some((Work::Task(i), t0.max(ready)));
            }
        }
        if t.init_pending {
            let b = self.gen_budget(t);
            return (b > 0).then_some((Work::Init(b), t0));
        }
        let app = self.app;
        if !app.has_epoch_work(&t.st) && app.has_deferred(&t.st) {
            let release = match self.barrier {
                BarrierMode::None => t.iqs.iter().all(|q| q.is_empty()),
                BarrierMode::Local => {
                    let others_idle = t.pus.iter().enumerate().all(|(i, &c)| i == pu || (c <= t0 && t.blocked[i].is_none()));
                    others_idle && self.tile_idle(t) && t.router.is_empty()
                }
                BarrierMode::Global => false,
            };
            if release {
                if self.barrier == BarrierMode::Local {
                    t.pus.iter_mut().for_each(|c| *c = t0);
                }
                app.begin_epoch(&mut t.st);
            }
        }
        if app.has_epoch_work(&t.st) {
            let b = self.gen_budget(t);
            return (b > 0).then_some((Work::Epoch(b), t0));
        }
        None
    }
}

impl<A: App> Shared<'_, A> {
    /// Run one task, init slice or epoch slice on PU `pu`. Returns false on
    /// a task error.
    fn execute(&self, t: &mut Tile<A::Tile>, pu: usize, work: Work, start: u64, c: u64) -> bool {
        let budget = match work {
            Work::Task(_) => u32::MAX,
            Work::Init(b) | Work::Epoch(b) => b,
        };
        let Tile { st, mem, emits, iqs, ctr, rm, coord, init_pending, .. } = t;
        let mut ctx = TaskCtx::new(*rm, *coord, self.kernel, start, self.tp, mem, self.clk, emits, budget);
        let name = match work {
            Work::Task(i) => {
                let e = iqs[i].pop_front().expect("scheduled queue has a head");
                ctr.queue_read_bits += self.bits[i];
                self.app.task(i as TaskId, st, &e.payload, &mut ctx);
                ctr.tasks[i] += 1;
                self.tasks[i].name
            }
            Work::Init(_) => {
                *init_pending = self.app.init(st, &mut ctx);
                ctr.init_steps += 1;
                "init"
            }
            Work::Epoch(_) => {
                self.app.epoch_step(st, &mut ctx);
                ctr.epoch_steps += 1;
                "epoch"
            }
        };
        let cycles = ctx.cycles();
        let inst = ctx.inst;
        let err = ctx.error.take();
        if let Some(e) = err {
            t.error = Some(EngineError::Task { tile: t.coord, cycle: c, task: name.into(), msg: e.to_string() });
            return false;
        }
        t.ctr.inst.add(&inst);
        let end = start + cycles * self.tp;
        t.pus[pu] = end;
        self.add_busy(t, start, end);
        if let Some(fc) = self.frame_cycles {
            frame_at(&mut t.frames, c / fc).tasks += 1;
        }
        let mut emits = std::mem::take(&mut t.emits);
        self.deliver(t, &mut emits, c);
        t.emits = emits;
        if !t.pending.is_empty() {
            t.blocked[pu] = Some(end);
        }
        t.progress = true;
        true
    }

    /// Phase A for one tile at NoC cycle `c`.
    fn step(&self, t: &mut Tile<A::Tile>, ob: &mut Outbox, s: usize, c: u64, dram: &[DramChannelState]) {
        t.progress = false;
        let cyc_start = c * self.tn;
        let cyc_end = cyc_start + self.tn;
        if let Some(port) = t.mem.dram.as_mut() {
            port.cursor = dram[port.channel as usize];
        }
        if !t.pending.is_empty() {
            self.drain_pending(t, c);
        }
        let dram_before = t.mem.counters.dram_reqs;

        for pu in 0..t.pus.len() {
            loop {
                if t.blocked[pu].is_some() {
                    break;
                }
                let t0 = t.pus[pu].max(cyc_start);
                if t0 >= cyc_end {
                    break;
                }
                let Some((work, start)) = self.choose(t, pu, t0, cyc_end) else { break };
                if !self.execute(t, pu, work, start, c) {
                    return;
                }
            }
        }

        let geom = &self.geoms[s];
        let n = self.tasks.len();
        let mut iq_free = std::mem::take(&mut t.iq_free);
        iq_free.clear();
        iq_free.extend(self.iq_cap.iter().zip(&t.iqs).map(|(&cap, q)| cap.saturating_sub(q.len() as u32)));
        let hops_before = t.ctr.noc.flit_hops[0];
        let stalls_before = t.ctr.noc.stall_backpressure + t.ctr.noc.stall_contention;
        let mut moved = t.router.route_step(c, geom, &self.np, &mut iq_free, ob, &mut t.ejected, &mut t.ctr.noc);
        t.iq_free = iq_free;
        let ejected = t.ejected.len() as u64;
        for m in t.ejected.drain(..) {
            let ch = m.channel as usize;
            t.ctr.queue_write_bits += self.bits[ch];
            if t.mem.cache.is_some() {
                t.prefetch.clear();
                self.app.prefetch_addrs(m.channel, &t.st, &m.payload, &mut t.prefetch);
                for &a in &t.prefetch {
                    t.mem.prefetch(a, cyc_start, self.clk);
                }
            }
            t.iqs[ch].push_back(IqEntry { payload: m.payload, ready_ps: cyc_end });
        }
        let mut injected = 0;
        if let Some(ch) = t.router.inject(&mut t.cqs, c, geom, &self.np, &mut t.ctr.noc) {
            t.ctr.queue_read_bits += self.bits[ch as usize];
            injected = 1;
            moved = true;
        }
        if !t.pending.is_empty() {
            self.drain_pending(t, c);
        }
        if moved || ejected > 0 || !ob.is_empty() {
            t.progress = true;
            t.quiet = t.quiet.max(c + 1);
        }

        if let Some(fc) = self.frame_cycles {
            let f = frame_at(&mut t.frames, c / fc);
            f.router_active += moved as u64;
            f.injected += injected;
            f.ejected += ejected;
            f.flit_hops += t.ctr.noc.flit_hops[0] - hops_before;
            f.stalls += t.ctr.noc.stall_backpressure + t.ctr.noc.stall_contention - stalls_before;
            f.dram_reqs += t.mem.counters.dram_reqs - dram_before;
            if self.track_queues {
                if f.iq_max.len() < n {
                    f.iq_max.resize(n, 0);
                    f.cq_max.resize(n, 0);
                }
                for i in 0..n {
                    f.iq_max[i] = f.iq_max[i].max(t.iqs[i].len() as u32);
                    f.cq_max[i] = f.cq_max[i].max(t.cqs[i].len() as u32);
                }
            }
        }
        self.update_wake(t, c);
    }

    fn update_wake(&self, t: &mut Tile<A::Tile>, c: u64) {
        let next = c + 1;
        let mut wake = u64::MAX;
        if !t.router.is_empty() || !t.pending.is_empty() {
            wake = next;
        }
        for q in &t.cqs {
            if let Some(m) = q.front() {
                wake = wake.min(m.ts.max(next));
            }
        }
        let app = self.app;
        let pu_work = t.init_pending
            || t.iqs.iter().any(|q| !q.is_empty())
            || app.has_epoch_work(&t.st)
            || (self.barrier != BarrierMode::Global && app.has_deferred(&t.st));
        if pu_work {
            let free = t
                .pus
                .iter()
                .zip(&t.blocked)
                .filter(|(_, b)| b.is_none())
                .map(|(&clk, _)| clk / self.tn)
                .min();
            if let Some(f) = free {
                wake = wake.min(f.max(next));
            }
        }
        for &clk in &t.pus {
            t.quiet = t.quiet.max(clk.div_ceil(self.tn));
        }
        t.wake = wake;
    }
}

fn dram_port(cfg: &Config, c: TileCoord, side_mm: f64, tn: u64) -> DramPort {
    let m = &cfg.machine;
    let p = &cfg.params;
    let d = m.dram.as_ref().expect("cache mode requires DRAM");
    let (w, _) = m.global_grid();
    let chiplets_per_row = w / m.tiles_x;
    let chiplet = (c.y / m.tiles_y) * chiplets_per_row + c.x / m.tiles_x;
    let (lx, ly) = (c.x % m.tiles_x, c.y % m.tiles_y);
    let channel = chiplet * d.channels + lx * d.channels / m.tiles_x;
    let rt_ps = p.dram_rw_latency_ns * 1000.0 + 2.0 * (ly + 1) as f64 * side_mm * p.noc_wire_ps_mm;
    let bytes_per_cycle = d.channel_bw_gbs / m.freq_op_noc;
    let line_bytes = m.cacheline_bits as f64 / 8.0;
    DramPort {
        channel,
        round_trip_cycles: (rt_ps / tn as f64).ceil() as u64,
        occupancy_cycles: ((line_bytes / bytes_per_cycle).ceil() as u64).max(1),
        cursor: DramChannelState::default(),
        issued: Vec::new(),
    }
}

fn period_ps(ghz: f64) -> u64 {
    ((1000.0 / ghz).round() as u64).max(1)
}

/// NoC cycles in one frame of `frame_us` microseconds of DUT time.
pub fn frame_cycles(m: &MachineConfig, frame_us: f64) -> u64 {
    ((frame_us * 1e6 / period_ps(m.freq_op_noc) as f64).round() as u64).max(1)
}

/// Simulate `app` on the machine in `cfg`.
pub fn run<A: App>(app: &A, cfg: &Config, opts: &SimOptions) -> Result<SimResult<A::Tile>, EngineError> {
    let m = &cfg.machine;
    let p = &cfg.params;
    cfg.validate().map_err(|e| EngineError::Setup(e.to_string()))?;
    let tasks = app.tasks();
    check_task_graph(&tasks)?;
    if tasks.is_empty() {
        return Err(EngineError::Setup("application defines no tasks".into()));
    }
    let n = tasks.len();
    let (w, h) = m.global_grid();
    let ntiles = (w * h) as usize;
    let (ax, ay) = m.axis_graphs();
    let diam = m.network_diameter();
    let side = tile_side_mm(m, p);
    let store = |c: TileCoord| c.x * h + c.y;
    let mut geoms = build_geometry(m, p, side, store);
    geoms.sort_by_key(|g| store(g.coord));
    let combine: Vec<Option<CombineFn>> = tasks.iter().map(|t| t.combine).collect();
    let np = NocParams {
        ax: &ax,
        ay: &ay,
        nports: m.ports_per_router(),
        channels: n,
        slots: m.buffer_slots_per_port as u16,
        nocs: m.num_physical_nocs.max(1) as usize,
        arbitration: m.arbitration,
        reduction_degree: m.reduction_tree_degree as u16,
        combine: &combine,
    };
    let tn = period_ps(m.freq_op_noc);
    let tp = period_ps(m.freq_op_pu);
    let bits: Vec<u64> = tasks.iter().map(|t| t.payload_bits as u64).collect();
    let words: Vec<u16> = tasks.iter().map(|t| message_words(t.payload_bits, m.noc_width_bits, !m.no_header)).collect();
    let iq_cap: Vec<u32> = tasks.iter().map(|t| m.iq_capacity_for(t.id)).collect();
    let queue_bytes: u64 =
        tasks.iter().map(|t| (m.iq_capacity_for(t.id) + m.cq_capacity) as u64 * (t.payload_bits as u64).div_ceil(8)).sum();
    let slice = m.slice_bytes();
    let cache_mode = m.spm_mode.is_cache();
    if queue_bytes >= m.spm_kib as u64 * 1024 {
        return Err(EngineError::Setup(format!(
            "task queues need {queue_bytes} bytes but the scratchpad has {}",
            m.spm_kib as u64 * 1024
        )));
    }
    let (data_off, data_bytes) = if cache_mode { (0, slice) } else { (queue_bytes, slice - queue_bytes) };
    let footprints: Vec<u64> = (0..ntiles as u32).map(|i| app.footprint(i)).collect();
    if let Some((i, &need)) = footprints.iter().enumerate().find(|(_, &f)| f > data_bytes) {
        let total: u64 = footprints.iter().sum();
        return Err(EngineError::Setup(format!(
            "tile {} needs {need} bytes of data but has {data_bytes}; the dataset needs at least {} tiles of this size",
            m.coord_of(i as u64),
            total.div_ceil(data_bytes.max(1))
        )));
    }

    let npus = m.pus_per_tile.max(1) as usize;
    let mut tiles: Vec<Tile<A::Tile>> = Vec::with_capacity(ntiles);
    for s in 0..ntiles as u32 {
        let coord = TileCoord::new(s / h, s % h);
        let rm = coord.y * w + coord.x;
        let base = m.slice_base(coord);
        let mem = if cache_mode {
            TileMemory::cached(base, slice, m, p, queue_bytes, dram_port(cfg, coord, side, tn))
        } else {
            TileMemory::scratchpad(base, slice, m.spm_kib, p)
        };
        let info = TileInfo { index: rm, coord, data_base: base + data_off, data_bytes, cfg: m };
        tiles.push(Tile {
            rm,
            coord,
            st: app.make_tile(&info),
            pus: vec![0; npus],
            blocked: vec![None; npus],
            iqs: (0..n).map(|_| VecDeque::new()).collect(),
            cqs: (0..n).map(|_| VecDeque::new()).collect(),
            pending: VecDeque::new(),
            router: Router::new(&geoms[s as usize], &np),
            mem,
            cursor: 0,
            init_pending: true,
            wake: 0,
            quiet: 0,
            progress: false,
            ctr: TileCtr { noc: NocCounters::new(n), tasks: vec![0; n], local: vec![0; n], ..Default::default() },
            frames: Vec::new(),
            emits: Vec::new(),
            ejected: Vec::new(),
            prefetch: Vec::new(),
            iq_free: Vec::new(),
            error: None,
        });
    }
    let nchannels = match (&m.dram, cache_mode) {
        (Some(d), true) => (m.chiplet_count() as u32 * d.channels) as usize,
        _ => 0,
    };
    let mut dram = vec![DramChannelState::default(); nchannels];

    let mut shared = Shared {
        app,
        tasks: &tasks,
        np,
        geoms: &geoms,
        tn,
        tp,
        grid_w: w,
        iq_cap,
        cq_cap: m.cq_capacity,
        words,
        bits,
        gen_targets: app.generator_targets(),
        barrier: app.barrier(),
        frame_cycles: opts.frame_cycles.map(|f| f.max(1)),
        track_queues: opts.track_queues,
        kernel: 0,
        policy: &m.tsu_policy,
        clk: AccessClock { noc_period_ps: tn },
    };

    let workers = opts.workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| EngineError::Setup(e.to_string()))?;
    let chunk = (w as usize).div_ceil(workers) * h as usize;
    let mut outboxes: Vec<Outbox> = vec![Outbox::default(); ntiles];
    let mut flags = vec![Flags::default(); ntiles];
    let watchdog = (10 * diam).max(1_000_000);
    let mut kernel_cycles = Vec::new();
    let mut global_epochs = 0;
    let mut c = 0u64;

    for k in 0..app.kernels() {
        shared.kernel = k;
        let t0 = c;
        for t in tiles.iter_mut() {
            t.init_pending = true;
            t.pus.iter_mut().for_each(|p| *p = (*p).max(t0 * tn));
            t.wake = t0;
            t.quiet = t0;
        }
        flags.iter_mut().for_each(|f| f.wake = t0);
        let mut last_progress = c;
        loop {
            let sh = &shared;
            let dr = &dram;
            let phase_a = |(ci, (ts, (obs, fl))): (usize, (&mut [Tile<A::Tile>], (&mut [Outbox], &mut [Flags])))| {
                let mut progress = false;
                let mut error = false;
                for (j, ((t, ob), f)) in ts.iter_mut().zip(obs.iter_mut()).zip(fl.iter_mut()).enumerate() {
                    if f.sent {
                        ob.clear();
                        f.sent = false;
                    }
                    if f.wake <= c {
                        sh.step(t, ob, ci * chunk + j, c, dr);
                        progress |= t.progress;
                        error |= t.error.is_some();
                        f.wake = t.wake;
                        f.sent = !ob.is_empty();
                        f.issued = t.mem.dram.as_ref().is_some_and(|p| !p.issued.is_empty());
                    }
                }
                (progress, error)
            };
            let (progress, error) = if workers == 1 {
                phase_a((0, (&mut tiles[..], (&mut outboxes[..], &mut flags[..]))))
            } else {
                pool.install(|| {
                    tiles
                        .par_chunks_mut(chunk)
                        .zip(outboxes.par_chunks_mut(chunk).zip(flags.par_chunks_mut(chunk)))
                        .enumerate()
                        .map(phase_a)
                        .reduce(|| (false, false), |a, b| (a.0 | b.0, a.1 | b.1))
                })
            };
            if error {
                let e = tiles.iter_mut().find_map(|t| t.error.take()).expect("error flagged");
                return Err(e);
            }
            for i in 0..ntiles {
                if flags[i].issued {
                    flags[i].issued = false;
                    let port = tiles[i].mem.dram.as_mut().expect("issuing tile has a DRAM port");
                    let ch = &mut dram[port.channel as usize];
                    for x in port.issued.drain(..) {
                        dram_request(ch, x, port.occupancy_cycles, port.round_trip_cycles);
                    }
                }
                if flags[i].sent {
                    let ob = &outboxes[i];
                    let nbr = &geoms[i].nbr;
                    for &(op, _) in &ob.msgs {
                        flags[nbr[op as usize] as usize].recv = true;
                    }
                    for &(ip, _) in &ob.credits {
                        flags[nbr[ip as usize] as usize].recv = true;
                    }
                }
            }

            let obs = &outboxes;
            let np = &shared.np;
            let phase_b = |(ci, (ts, fl)): (usize, (&mut [Tile<A::Tile>], &mut [Flags]))| {
                let mut min_wake = u64::MAX;
                for (j, (t, f)) in ts.iter_mut().zip(fl.iter_mut()).enumerate() {
                    if f.recv {
                        f.recv = false;
                        let g = &geoms[ci * chunk + j];
                        let mut got = false;
                        for port in 0..MAX_PORTS {
                            let nb = g.nbr[port];
                            if nb == NO_TILE {
                                continue;
                            }
                            let ob = &obs[nb as usize];
                            let back = opposite(port) as u8;
                            for (op, msg) in &ob.msgs {
                                if *op == back {
                                    t.router.arrive(port, msg.clone(), g, np, &mut t.ctr.noc);
                                    got = true;
                                }
                            }
                            for &(ip, ch) in &ob.credits {
                                if ip == back {
                                    t.router.credit(port, ch);
                                }
                            }
                        }
                        if got {
                            t.wake = t.wake.min(c + 1);
                            t.quiet = t.quiet.max(c + 1);
                            f.wake = t.wake;
                        }
                    }
                    min_wake = min_wake.min(f.wake);
                }
                min_wake
            };
            let min_wake = if workers == 1 {
                phase_b((0, (&mut tiles[..], &mut flags[..])))
            } else {
                pool.install(|| {
                    tiles
                        .par_chunks_mut(chunk)
                        .zip(flags.par_chunks_mut(chunk))
                        .enumerate()
                        .map(phase_b)
                        .min()
                        .unwrap_or(u64::MAX)
                })
            };

            if progress {
                last_progress = c;
            }
            if min_wake == u64::MAX {
                let mut clocks: Vec<u64> = tiles.iter().map(|t| t.quiet.max(t0)).collect();
                if shared.barrier == BarrierMode::Global && tiles.iter().any(|t| app.has_deferred(&t.st)) {
                    let tb = epoch_barrier(&mut clocks, BarrierScope::Global, diam);
                    for t in tiles.iter_mut() {
                        t.pus.iter_mut().for_each(|p| *p = tb * tn);
                        if app.has_deferred(&t.st) {
                            app.begin_epoch(&mut t.st);
                        }
                        t.wake = tb;
                        t.quiet = tb;
                    }
                    flags.iter_mut().for_each(|f| f.wake = tb);
                    global_epochs += 1;
                    c = tb;
                    last_progress = c;
                    continue;
                }
                let q = clocks.into_iter().max().unwrap_or(t0);
                let mut det = TerminationDetector::new(2 * diam);
                det.observe(q, true);
                c = det.deadline().expect("idle observed");
                kernel_cycles.push(c - t0);
                break;
            }
            if c - last_progress > watchdog {
                return Err(EngineError::Deadlock(c - last_progress));
            }
            c = (c + 1).max(min_wake);
        }
    }

    let mut counters = CounterSet {
        checksum: cfg.checksum(),
        grid: (w, h),
        noc_cycles: c,
        pu_cycles: (c * tn).div_ceil(tp),
        counters: Default::default(),
    };
    let mut noc = NocCounters::new(n);
    let mut inst = InstCounters::default();
    let mut mem = MemCounters::default();
    let mut tot = TileCtr { tasks: vec![0; n], local: vec![0; n], ..Default::default() };
    for t in &tiles {
        noc.add(&t.ctr.noc);
        inst.add(&t.ctr.inst);
        mem.add(&t.mem.counters);
        for i in 0..n {
            tot.tasks[i] += t.ctr.tasks[i];
            tot.local[i] += t.ctr.local[i];
        }
        tot.init_steps += t.ctr.init_steps;
        tot.epoch_steps += t.ctr.epoch_steps;
        tot.queue_read_bits += t.ctr.queue_read_bits;
        tot.queue_write_bits += t.ctr.queue_write_bits;
        tot.pu_busy_ps += t.ctr.pu_busy_ps;
        tot.pu_blocked_ps += t.ctr.pu_blocked_ps;
    }
    let set = |cs: &mut CounterSet, k: &str, v: u64| cs.set(k, v);
    let cs = &mut counters;
    set(cs, "inst.int", inst.int);
    set(cs, "inst.fp", inst.fp);
    set(cs, "inst.branch", inst.branch);
    set(cs, "inst.mem", inst.mem);
    set(cs, "sram.read_bits", mem.sram_read_bits);
    set(cs, "sram.write_bits", mem.sram_write_bits);
    set(cs, "queue.read_bits", tot.queue_read_bits);
    set(cs, "queue.write_bits", tot.queue_write_bits);
    set(cs, "tag.reads", mem.tag_reads);
    set(cs, "hops.noc", noc.flit_hops[0]);
    set(cs, "hops.chiplet", noc.flit_hops[1]);
    set(cs, "hops.package", noc.flit_hops[2]);
    set(cs, "hops.node", noc.flit_hops[3]);
    set(cs, "hops.msgs", noc.msg_hops);
    set(cs, "wire.flit_um", noc.wire_flit_um);
    set(cs, "dram.read_bits", mem.dram_read_bits);
    set(cs, "dram.write_bits", mem.dram_write_bits);
    set(cs, "mem.loads", mem.loads);
    set(cs, "mem.stores", mem.stores);
    set(cs, "mem.hits", mem.hits);
    set(cs, "mem.misses", mem.misses);
    set(cs, "mem.writebacks", mem.writebacks);
    set(cs, "mem.evictions", mem.evictions);
    set(cs, "mem.prefetch.issued", mem.prefetch_issued);
    set(cs, "mem.prefetch.useful", mem.prefetch_useful);
    for (i, ch) in dram.iter().enumerate() {
        set(cs, &format!("mem.dram_reqs.{i}"), ch.accepted);
    }
    set(cs, "stall.backpressure", noc.stall_backpressure);
    set(cs, "stall.contention", noc.stall_contention);
    set(cs, "stall.pu_blocked", tot.pu_blocked_ps / tn);
    for (i, t) in tasks.iter().enumerate() {
        set(cs, &format!("msgs.injected.{}", t.name), noc.injected[i]);
        set(cs, &format!("msgs.ejected.{}", t.name), noc.ejected[i]);
        set(cs, &format!("msgs.merged.{}", t.name), noc.merged[i]);
        set(cs, &format!("msgs.local.{}", t.name), tot.local[i]);
        set(cs, &format!("tasks.{}", t.name), tot.tasks[i]);
    }
    set(cs, "tasks.init_steps", tot.init_steps);
    set(cs, "tasks.epoch_steps", tot.epoch_steps);
    set(cs, "pu.busy_cycles", tot.pu_busy_ps / tp);
    set(cs, "epochs.global", global_epochs);

    tiles.sort_by_key(|t| t.rm);
    let mut states = Vec::with_capacity(ntiles);
    let mut frames = Vec::with_capacity(ntiles);
    for t in tiles {
        states.push(t.st);
        frames.push(t.frames);
    }
    Ok(SimResult {
        cycles: c,
        kernel_cycles,
        global_epochs,
        counters,
        tiles: states,
        frames,
        frame_cycles: shared.frame_cycles.unwrap_or(0),
        noc_period_ps: tn,
        pu_period_ps: tp,
        task_names: tasks.iter().map(|t| t.name).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archmodel::{MachineConfig, ModelParams};

    fn cfg(m: MachineConfig) -> Config {
        Config { machine: m, params: ModelParams::default() }
    }

    fn opts(workers: usize) -> SimOptions {
        SimOptions { workers, ..Default::default() }
    }

    /// Init runs `delay` cycles on every tile and optionally sends one value
    /// to every other tile; the task accumulates received values.
    struct Scatter {
        delay: u64,
        all_to_all: bool,
        ntiles: u32,
        to_zero: bool,
    }

    #[derive(Default)]
    struct Acc {
        sum: u64,
        count: u64,
        next: u32,
    }

    fn add(d: &mut Payload, s: &Payload) {
        d[1] += s[1];
    }

    impl App for Scatter {
        type Tile = Acc;
        fn name(&self) -> &str {
            "scatter"
        }
        fn tasks(&self) -> Vec<TaskDescriptor> {
            vec![TaskDescriptor::leaf(0, "acc", 64).with_combine(add)]
        }
        fn generator_targets(&self) -> Vec<TaskId> {
            vec![0]
        }
        fn footprint(&self, _tile: u32) -> u64 {
            64
        }
        fn make_tile(&self, _info: &TileInfo) -> Acc {
            Acc::default()
        }
        fn init(&self, st: &mut Acc, ctx: &mut TaskCtx) -> bool {
            if st.next == 0 {
                ctx.int(self.delay);
            }
            if self.to_zero {
                if ctx.tile != 0 {
                    ctx.send(0, 0, &[0, ctx.tile as u64]);
                }
                return false;
            }
            if !self.all_to_all {
                return false;
            }
            while st.next < self.ntiles && ctx.can_send() {
                if st.next != ctx.tile {
                    ctx.send(st.next, 0, &[st.next as u64, ctx.tile as u64 + 1]);
                }
                st.next += 1;
            }
            st.next < self.ntiles
        }
        fn task(&self, _id: TaskId, st: &mut Acc, payload: &[u64], ctx: &mut TaskCtx) {
            ctx.int(2);
            st.sum += payload[1];
            st.count += 1;
        }
    }

    fn scatter(delay: u64, all_to_all: bool) -> Scatter {
        Scatter { delay, all_to_all, ntiles: 16, to_zero: false }
    }

    #[test]
    fn empty_kernel_takes_two_diameters() {
        let r = run(&scatter(0, false), &cfg(MachineConfig::default()), &opts(1)).unwrap();
        assert_eq!(r.cycles, 12);
        assert_eq!(r.kernel_cycles, [12]);
    }

    #[test]
    fn init_delay_adds_to_runtime() {
        let r = run(&scatter(100, false), &cfg(MachineConfig::default()), &opts(1)).unwrap();
        assert_eq!(r.cycles, 112);
        assert_eq!(r.counters.get("pu.busy_cycles"), 16 * 100);
        assert_eq!(r.counters.get("inst.int"), 16 * 100);
    }

    #[test]
    fn all_to_all_delivers_everything() {
        let r = run(&scatter(0, true), &cfg(MachineConfig::default()), &opts(1)).unwrap();
        for (i, t) in r.tiles.iter().enumerate() {
            assert_eq!(t.count, 15);
            assert_eq!(t.sum, (1..=16u64).sum::<u64>() - (i as u64 + 1));
        }
        assert_eq!(r.counters.get("msgs.injected.acc"), 16 * 15);
        assert_eq!(r.counters.get("msgs.ejected.acc"), 16 * 15);
        assert_eq!(r.counters.get("tasks.acc"), 16 * 15);
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let m = MachineConfig { tiles_x: 8, tiles_y: 8, iq_capacity: 4, cq_capacity: 4, ..Default::default() };
        let app = Scatter { delay: 3, all_to_all: true, ntiles: 64, to_zero: false };
        let base = run(&app, &cfg(m.clone()), &SimOptions { workers: 1, frame_cycles: Some(50), track_queues: true }).unwrap();
        for w in [2, 3, 8] {
            let r = run(&app, &cfg(m.clone()), &SimOptions { workers: w, frame_cycles: Some(50), track_queues: true }).unwrap();
            assert_eq!(r.cycles, base.cycles);
            assert_eq!(r.counters, base.counters);
            assert_eq!(r.frames, base.frames);
        }
    }

    #[test]
    fn reduction_tree_combines_toward_the_root() {
        let app = Scatter { delay: 0, all_to_all: false, ntiles: 64, to_zero: true };
        let m = MachineConfig { tiles_x: 8, tiles_y: 8, reduction_tree_degree: 4, ..Default::default() };
        let r = run(&app, &cfg(m), &opts(1)).unwrap();
        assert_eq!(r.tiles[0].sum, (1..64u64).sum::<u64>());
        assert!(r.counters.get("msgs.merged.acc") > 0);
        assert!(r.tiles[0].count < 63);
        let plain = run(&app, &cfg(MachineConfig { tiles_x: 8, tiles_y: 8, ..Default::default() }), &opts(1)).unwrap();
        assert_eq!(plain.tiles[0].sum, r.tiles[0].sum);
        assert_eq!(plain.tiles[0].count, 63);
        assert_eq!(plain.counters.get("msgs.merged.acc"), 0);
    }

    #[test]
    fn frames_cover_the_busy_time() {
        let r = run(&scatter(100, true), &cfg(MachineConfig::default()), &SimOptions { workers: 1, frame_cycles: Some(7), track_queues: false }).unwrap();
        let busy: u64 = r.frames.iter().flatten().map(|f| f.pu_busy_ps).sum();
        assert_eq!(busy, r.counters.get("pu.busy_cycles") * r.pu_period_ps);
        let inj: u64 = r.frames.iter().flatten().map(|f| f.injected).sum();
        assert_eq!(inj, r.counters.get("msgs.injected.acc"));
    }

    #[test]
    fn oversized_dataset_is_rejected() {
        struct Big;
        impl App for Big {
            type Tile = ();
            fn name(&self) -> &str {
                "big"
            }
            fn tasks(&self) -> Vec<TaskDescriptor> {
                vec![TaskDescriptor::leaf(0, "t", 32)]
            }
            fn generator_targets(&self) -> Vec<TaskId> {
                vec![]
            }
            fn footprint(&self, _tile: u32) -> u64 {
                1 << 30
            }
            fn make_tile(&self, _info: &TileInfo) {}
            fn init(&self, _st: &mut (), _ctx: &mut TaskCtx) -> bool {
                false
            }
            fn task(&self, _id: TaskId, _st: &mut (), _p: &[u64], _ctx: &mut TaskCtx) {}
        }
        let e = run(&Big, &cfg(MachineConfig::default()), &opts(1)).unwrap_err();
        assert!(e.to_string().contains("at least"), "{e}");
    }

    /// Every tile defers one item per epoch for three epochs.
    struct Epochs(BarrierMode);

    #[derive(Default)]
    struct EpochTile {
        deferred: u32,
        batch: u32,
        done: u32,
    }

    impl App for Epochs {
        type Tile = EpochTile;
        fn name(&self) -> &str {
            "epochs"
        }
        fn tasks(&self) -> Vec<TaskDescriptor> {
            vec![TaskDescriptor::leaf(0, "t", 32)]
        }
        fn generator_targets(&self) -> Vec<TaskId> {
            vec![0]
        }
        fn barrier(&self) -> BarrierMode {
            self.0
        }
        fn footprint(&self, _tile: u32) -> u64 {
            0
        }
        fn make_tile(&self, _info: &TileInfo) -> EpochTile {
            EpochTile { deferred: 3, ..Default::default() }
        }
        fn init(&self, _st: &mut EpochTile, ctx: &mut TaskCtx) -> bool {
            ctx.int(1);
            false
        }
        fn task(&self, _id: TaskId, _st: &mut EpochTile, _p: &[u64], _ctx: &mut TaskCtx) {}
        fn has_epoch_work(&self, st: &EpochTile) -> bool {
            st.batch > 0
        }
        fn has_deferred(&self, st: &EpochTile) -> bool {
            st.deferred > 0
        }
        fn begin_epoch(&self, st: &mut EpochTile) {
            st.deferred -= 1;
            st.batch = 1;
        }
        fn epoch_step(&self, st: &mut EpochTile, ctx: &mut TaskCtx) {
            ctx.int(10);
            st.batch -= 1;
            st.done += 1;
        }
    }

    #[test]
    fn global_epochs_pay_a_barrier_each() {
        let r = run(&Epochs(BarrierMode::Global), &cfg(MachineConfig::default()), &opts(1)).unwrap();
        assert_eq!(r.global_epochs, 3);
        assert!(r.tiles.iter().all(|t| t.done == 3));
        // init 1, then three rounds of (barrier 12 + 10 work), then 12 to terminate.
        assert_eq!(r.cycles, 1 + 3 * (12 + 10) + 12);
    }

    #[test]
    fn local_epochs_need_no_global_barrier() {
        for mode in [BarrierMode::Local, BarrierMode::None] {
            let r = run(&Epochs(mode), &cfg(MachineConfig::default()), &opts(1)).unwrap();
            assert_eq!(r.global_epochs, 0);
            assert!(r.tiles.iter().all(|t| t.done == 3));
            assert_eq!(r.cycles, 1 + 3 * 10 + 12);
        }
    }

    #[test]
    fn tiny_queues_still_complete() {
        let m = MachineConfig { iq_capacity: 1, cq_capacity: 1, buffer_slots_per_port: 1, ..Default::default() };
        let r = run(&scatter(0, true), &cfg(m), &opts(1)).unwrap();
        assert!(r.tiles.iter().all(|t| t.count == 15));
        assert!(r.counters.get("stall.backpressure") > 0);
    }
}
