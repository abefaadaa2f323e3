//! Simulation driver: tasks, scheduling, lock-step parallel execution and
//! termination.
//!
//! Applications describe their work as an init task, message-triggered tasks
//! and optional epoch work. Task bodies run natively; the latency they report
//! through [`TaskCtx`] advances the PU clock, and the messages they emit are
//! timestamped at their emission point inside the task.

mod sim;
pub mod termination;
pub mod tsu;

use smallvec::SmallVec;
use thiserror::Error;

use crate::archmodel::{MachineConfig, TileCoord};
use crate::memory::{AccessClock, MemError, Rw, TileMemory};
use crate::noc::{CombineFn, Payload};

pub use sim::{frame_cycles, run, FrameStats, SimOptions, SimResult};
pub use termination::{epoch_barrier, BarrierScope, TerminationDetector};

pub type TaskId = u16;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("task graph has a cycle through task {0}")]
    CyclicTasks(TaskId),
    #[error("task {task} invokes unknown task {target}")]
    UnknownTask { task: TaskId, target: TaskId },
    #[error("task IDs must be 0..n in order; found {0}")]
    TaskIds(TaskId),
    #[error("tile {tile}, cycle {cycle}, task {task}: {msg}")]
    Task { tile: TileCoord, cycle: u64, task: String, msg: String },
    #[error("no progress for {0} cycles with work outstanding")]
    Deadlock(u64),
    #[error("{0}")]
    Setup(String),
}

/// How epoch work is released.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierMode {
    /// As soon as the tile's input queues are empty.
    None,
    /// When the tile is idle; its PUs synchronize first.
    Local,
    /// When the whole machine is idle, after a reduction and broadcast.
    Global,
}

impl std::str::FromStr for BarrierMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(BarrierMode::None),
            "local" => Ok(BarrierMode::Local),
            "global" => Ok(BarrierMode::Global),
            _ => Err(format!("unknown barrier mode `{s}` (expected none, local or global)")),
        }
    }
}

impl std::fmt::Display for BarrierMode {
    fn fmt(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
        f.write_str(match self {
            BarrierMode::None => "none",
            BarrierMode::Local => "local",
            BarrierMode::Global => "global",
        })
    }
}

#[derive(Debug, Clone)]
pub struct TaskDescriptor {
    pub id: TaskId,
    pub name: &'static str,
    pub payload_bits: u32,
    /// Tasks this one may invoke.
    pub targets: Vec<TaskId>,
    /// Upper bound on messages emitted per invocation.
    pub max_emit: u32,
    /// Combine function for reduction trees; payload word 0 is the key.
    pub combine: Option<CombineFn>,
}

impl TaskDescriptor {
    pub fn leaf(id: TaskId, name: &'static str, payload_bits: u32) -> Self {
        TaskDescriptor { id, name, payload_bits, targets: vec![], max_emit: 0, combine: None }
    }

    pub fn with_combine(mut self, f: CombineFn) -> Self {
        self.combine = Some(f);
        self
    }
}

/// Reject task tables that are not numbered densely or whose invocation
/// graph has a cycle (including self-invocation).
pub fn check_task_graph(tasks: &[TaskDescriptor]) -> Result<(), EngineError> {
    for (i, t) in tasks.iter().enumerate() {
        if t.id as usize != i {
            return Err(EngineError::TaskIds(t.id));
        }
        if let Some(&bad) = t.targets.iter().find(|&&x| x as usize >= tasks.len()) {
            return Err(EngineError::UnknownTask { task: t.id, target: bad });
        }
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    fn dfs(u: usize, tasks: &[TaskDescriptor], mark: &mut [u8]) -> Result<(), EngineError> {
        mark[u] = 1;
        for &v in &tasks[u].targets {
            match mark[v as usize] {
                1 => return Err(EngineError::CyclicTasks(v)),
                0 => dfs(v as usize, tasks, mark)?,
                _ => {}
            }
        }
        mark[u] = 2;
        Ok(())
    }
    let mut mark = vec![0u8; tasks.len()];
    for u in 0..tasks.len() {
        if mark[u] == 0 {
            dfs(u, tasks, &mut mark)?;
        }
    }
    Ok(())
}

/// Static facts about a tile handed to the application at setup.
#[derive(Debug, Clone, Copy)]
pub struct TileInfo<'a> {
    /// Row-major tile index.
    pub index: u32,
    pub coord: TileCoord,
    /// First byte of the tile's data region.
    pub data_base: u64,
    /// Bytes available for the dataset.
    pub data_bytes: u64,
    pub cfg: &'a MachineConfig,
}

/// A message produced by a task.
#[derive(Debug, Clone)]
pub struct Emit {
    pub dest: u32,
    pub task: TaskId,
    pub payload: Payload,
    pub emit_ps: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InstCounters {
    pub int: u64,
    pub fp: u64,
    pub branch: u64,
    pub mem: u64,
}

impl InstCounters {
    pub fn add(&mut self, o: &InstCounters) {
        self.int += o.int;
        self.fp += o.fp;
        self.branch += o.branch;
        self.mem += o.mem;
    }
}

/// Execution context of one task invocation.
pub struct TaskCtx<'a> {
    pub tile: u32,
    pub coord: TileCoord,
    pub kernel: u32,
    start_ps: u64,
    pu_period_ps: u64,
    cycles: u64,
    mem: &'a mut TileMemory,
    clk: AccessClock,
    out: &'a mut Vec<Emit>,
    budget: u32,
    pub(crate) inst: InstCounters,
    pub(crate) error: Option<MemError>,
}

impl<'a> TaskCtx<'a> {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        tile: u32,
        coord: TileCoord,
        kernel: u32,
        start_ps: u64,
        pu_period_ps: u64,
        mem: &'a mut TileMemory,
        clk: AccessClock,
        out: &'a mut Vec<Emit>,
        budget: u32,
    ) -> Self {
        TaskCtx { tile, coord, kernel, start_ps, pu_period_ps, cycles: 0, mem, clk, out, budget, inst: InstCounters::default(), error: None }
    }

    /// A context with its own scratch memory, for exercising task bodies in
    /// isolation.
    pub fn detached(mem: &'a mut TileMemory, out: &'a mut Vec<Emit>, budget: u32) -> Self {
        Self::new(0, TileCoord::new(0, 0), 0, 0, 1000, mem, AccessClock { noc_period_ps: 1000 }, out, budget)
    }

    pub fn cycles(&self) -> u64 {
        self.cycles
    }

    pub fn now_ps(&self) -> u64 {
        self.start_ps + self.cycles * self.pu_period_ps
    }

    pub fn int(&mut self, n: u64) {
        self.cycles += n;
        self.inst.int += n;
    }

    pub fn fp(&mut self, n: u64) {
        self.cycles += n;
        self.inst.fp += n;
    }

    pub fn branch(&mut self, n: u64) {
        self.cycles += n;
        self.inst.branch += n;
    }

    /// Extra cycles not tied to an instruction class.
    pub fn add_cycles(&mut self, n: u64) {
        self.cycles += n;
    }

    /// Memory access through the tile's SPM or cache.
    pub fn dcache(&mut self, addr: u64, rw: Rw) {
        self.inst.mem += 1;
        match self.mem.access(addr, rw, self.now_ps(), self.clk) {
            Ok(ps) => self.cycles += ps.div_ceil(self.pu_period_ps),
            Err(e) => {
                self.error.get_or_insert(e);
            }
        }
    }

    pub fn load(&mut self, addr: u64) {
        self.dcache(addr, Rw::Read);
    }

    pub fn store(&mut self, addr: u64) {
        self.dcache(addr, Rw::Write);
    }

    /// Whether another message fits in this invocation's emission budget.
    pub fn can_send(&self) -> bool {
        (self.out.len() as u32) < self.budget
    }

    pub fn send(&mut self, dest: u32, task: TaskId, payload: &[u64]) {
        self.out.push(Emit { dest, task, payload: SmallVec::from_slice(payload), emit_ps: self.now_ps() });
        self.cycles += 1;
        self.inst.mem += 1;
    }
}

/// An application in the task model.
pub trait App: Sync {
    type Tile: Send + Sync;

    fn name(&self) -> &str;
    fn tasks(&self) -> Vec<TaskDescriptor>;
    /// Tasks that init and epoch work send to.
    fn generator_targets(&self) -> Vec<TaskId>;
    fn kernels(&self) -> u32 {
        1
    }
    fn barrier(&self) -> BarrierMode {
        BarrierMode::None
    }
    /// Bytes of data each tile needs; checked against its memory.
    fn footprint(&self, tile: u32) -> u64;
    fn make_tile(&self, info: &TileInfo) -> Self::Tile;
    /// One slice of the kernel's init work; returns true while work remains.
    fn init(&self, st: &mut Self::Tile, ctx: &mut TaskCtx) -> bool;
    fn task(&self, id: TaskId, st: &mut Self::Tile, payload: &[u64], ctx: &mut TaskCtx);
    /// Whether a released epoch batch has items left.
    fn has_epoch_work(&self, _st: &Self::Tile) -> bool {
        false
    }
    /// Whether work is waiting for the next epoch.
    fn has_deferred(&self, _st: &Self::Tile) -> bool {
        false
    }
    /// Release deferred work as the next epoch batch.
    fn begin_epoch(&self, _st: &mut Self::Tile) {}
    /// Process part of the current epoch batch.
    fn epoch_step(&self, _st: &mut Self::Tile, _ctx: &mut TaskCtx) {}
    /// Addresses a queued task will touch, for indirect prefetching.
    fn prefetch_addrs(&self, _id: TaskId, _st: &Self::Tile, _payload: &[u64], _out: &mut Vec<u64>) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archmodel::ModelParams;

    fn t(id: TaskId, targets: &[TaskId]) -> TaskDescriptor {
        TaskDescriptor { targets: targets.to_vec(), max_emit: targets.len() as u32, ..TaskDescriptor::leaf(id, "t", 32) }
    }

    #[test]
    fn acyclic_graphs_are_accepted() {
        assert!(check_task_graph(&[t(0, &[1, 2]), t(1, &[2]), t(2, &[])]).is_ok());
        assert!(check_task_graph(&[]).is_ok());
    }

    #[test]
    fn cycles_are_rejected() {
        assert!(matches!(check_task_graph(&[t(0, &[1]), t(1, &[0])]), Err(EngineError::CyclicTasks(_))));
        assert!(matches!(check_task_graph(&[t(0, &[0])]), Err(EngineError::CyclicTasks(0))));
        assert!(matches!(check_task_graph(&[t(0, &[3])]), Err(EngineError::UnknownTask { .. })));
        assert!(matches!(check_task_graph(&[t(1, &[])]), Err(EngineError::TaskIds(1))));
    }

    #[test]
    fn delay_accounting() {
        let mut mem = TileMemory::scratchpad(0, 1 << 20, 256, &ModelParams::default());
        let mut out = vec![];
        let mut ctx = TaskCtx::detached(&mut mem, &mut out, 4);
        ctx.int(10);
        assert_eq!(ctx.cycles(), 10);
        ctx.load(64);
        assert_eq!(ctx.cycles(), 11);
        assert!(ctx.error.is_none());
        ctx.load(1 << 21);
        assert!(ctx.error.is_some());
    }

    #[test]
    fn emission_timestamp_is_the_emission_point() {
        let mut mem = TileMemory::scratchpad(0, 1 << 20, 256, &ModelParams::default());
        let mut out = vec![];
        let mut ctx = TaskCtx::detached(&mut mem, &mut out, 4);
        ctx.int(5);
        ctx.send(3, 0, &[1]);
        assert_eq!(ctx.out[0].emit_ps, 5000);
        assert!(ctx.can_send());
    }
}
