//! Tile memory: scratchpad or write-back cache over a DRAM channel.
//!
//! All timing inside this module is in picoseconds; DRAM channels count
//! transactions in memory-controller cycles, which run at the NoC clock.

use thiserror::Error;

use crate::archmodel::{MachineConfig, ModelParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MemError {
    #[error("access to {addr:#x} outside the tile's local slice [{base:#x}, {end:#x})")]
    RemoteAccess { addr: u64, base: u64, end: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rw {
    Read,
    Write,
}

/// Size-dependent SRAM characteristics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SramModel {
    pub latency_ns: f64,
    pub read_pj_bit: f64,
    pub write_pj_bit: f64,
    /// Multiplier on access energy from the bank-select mux tree.
    pub mux_factor: f64,
    pub active_banks: u32,
    /// Static power of the active banks in mW.
    pub leakage_mw: f64,
}

/// Larger SRAMs are built from more banks: latency grows by a step at every
/// quadrupling past the base bank size, and the mux tree energy by a factor at
/// every doubling.
pub fn sram_latency_and_energy(spm_kib: u32, p: &ModelParams) -> SramModel {
    let ratio = spm_kib as f64 / p.sram_bank_kib;
    let doublings = if ratio > 1.0 { ratio.log2().floor() as i32 } else { 0 };
    let quadruplings = doublings / 2;
    let mux_factor = p.sram_mux_growth.powi(doublings);
    SramModel {
        latency_ns: p.sram_rw_latency_ns + quadruplings as f64 * p.sram_latency_step_ns,
        read_pj_bit: p.sram_read_pj_bit * mux_factor,
        write_pj_bit: p.sram_write_pj_bit * mux_factor,
        mux_factor,
        active_banks: ratio.ceil().max(1.0) as u32,
        leakage_mw: p.sram_leak_mw_per_mib * spm_kib as f64 / 1024.0,
    }
}

/// Contention state of one DRAM channel. `next_free` is the transaction
/// cursor: the channel accepts one request per slot and never moves backwards.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DramChannelState {
    pub next_free: u64,
    pub accepted: u64,
}

/// Issue a request at cycle `x`; returns the completion delay in cycles. A
/// request that finds the cursor ahead of it waits `cursor - x` extra cycles.
pub fn dram_request(ch: &mut DramChannelState, x: u64, occupancy: u64, round_trip: u64) -> u64 {
    let start = ch.next_free.max(x);
    ch.next_free = start + occupancy;
    ch.accepted += 1;
    start - x + round_trip
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MemCounters {
    pub loads: u64,
    pub stores: u64,
    pub hits: u64,
    pub misses: u64,
    pub writebacks: u64,
    pub evictions: u64,
    pub dram_reqs: u64,
    pub prefetch_issued: u64,
    pub prefetch_useful: u64,
    pub sram_read_bits: u64,
    pub sram_write_bits: u64,
    pub tag_reads: u64,
    pub dram_read_bits: u64,
    pub dram_write_bits: u64,
}

impl MemCounters {
    pub fn add(&mut self, o: &MemCounters) {
        self.loads += o.loads;
        self.stores += o.stores;
        self.hits += o.hits;
        self.misses += o.misses;
        self.writebacks += o.writebacks;
        self.evictions += o.evictions;
        self.dram_reqs += o.dram_reqs;
        self.prefetch_issued += o.prefetch_issued;
        self.prefetch_useful += o.prefetch_useful;
        self.sram_read_bits += o.sram_read_bits;
        self.sram_write_bits += o.sram_write_bits;
        self.tag_reads += o.tag_reads;
        self.dram_read_bits += o.dram_read_bits;
        self.dram_write_bits += o.dram_write_bits;
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Line {
    tag: u64,
    valid: bool,
    dirty: bool,
    lru: u64,
    /// Time (ps) the fill completes; later than now for in-flight lines.
    ready_ps: u64,
    prefetched: bool,
    last_touch_cycle: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lookup {
    Hit { ready_ps: u64, first_use_of_prefetch: bool },
    Miss,
}

/// Set-associative write-back cache with LRU replacement; one way is a
/// direct-mapped cache. Tags, valid and dirty bits are carved out of the SPM.
#[derive(Debug, Clone)]
pub struct Cache {
    line_bytes: u64,
    sets: u64,
    ways: usize,
    lines: Vec<Line>,
    tick: u64,
}

/// What the cache evicted to make room.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Eviction {
    pub line_addr: u64,
    pub dirty: bool,
}

impl Cache {
    /// Build a cache out of `usable_bytes` of SRAM, counting a tag of
    /// `addr_bits` minus index/offset bits plus valid and dirty bits per line.
    pub fn with_capacity(usable_bytes: u64, line_bytes: u64, ways: u32, addr_bits: u32) -> Cache {
        let ways = ways.max(1) as u64;
        let line_bits = line_bytes * 8;
        let offset_bits = line_bytes.trailing_zeros() as u64;
        let mut lines = (usable_bytes * 8) / (line_bits + addr_bits as u64 + 2);
        // Refine once with the actual index width.
        for _ in 0..2 {
            let sets = (lines / ways).max(1);
            let index_bits = 64 - (sets.max(1) - 1).leading_zeros() as u64;
            let tag_bits = (addr_bits as u64).saturating_sub(index_bits + offset_bits);
            lines = (usable_bytes * 8) / (line_bits + tag_bits + 2);
        }
        let sets = (lines / ways).max(1);
        Cache {
            line_bytes,
            sets,
            ways: ways as usize,
            lines: vec![Line::default(); (sets * ways) as usize],
            tick: 0,
        }
    }

    pub fn capacity_lines(&self) -> u64 {
        self.sets * self.ways as u64
    }

    pub fn line_bytes(&self) -> u64 {
        self.line_bytes
    }

    fn set_range(&self, line_addr: u64) -> std::ops::Range<usize> {
        let set = (line_addr % self.sets) as usize;
        set * self.ways..(set + 1) * self.ways
    }

    pub fn contains(&self, line_addr: u64) -> bool {
        self.lines[self.set_range(line_addr)]
            .iter()
            .any(|l| l.valid && l.tag == line_addr)
    }

    pub fn lookup(&mut self, line_addr: u64, rw: Rw, cycle: u64) -> Lookup {
        self.tick += 1;
        let tick = self.tick;
        let r = self.set_range(line_addr);
        for l in &mut self.lines[r] {
            if l.valid && l.tag == line_addr {
                l.lru = tick;
                l.last_touch_cycle = cycle;
                if rw == Rw::Write {
                    l.dirty = true;
                }
                let first = l.prefetched;
                l.prefetched = false;
                return Lookup::Hit { ready_ps: l.ready_ps, first_use_of_prefetch: first };
            }
        }
        Lookup::Miss
    }

    /// Install a line; returns the victim if a valid line was displaced.
    /// Prefetch fills skip lines touched in the current cycle and give up
    /// if every way was.
    pub fn fill(
        &mut self,
        line_addr: u64,
        rw: Rw,
        ready_ps: u64,
        cycle: u64,
        prefetch: bool,
    ) -> Option<Option<Eviction>> {
        self.tick += 1;
        let tick = self.tick;
        let r = self.set_range(line_addr);
        let set = &mut self.lines[r];
        let victim = match set.iter().position(|l| !l.valid) {
            Some(i) => i,
            None => {
                let cand = set
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| !prefetch || l.last_touch_cycle != cycle)
                    .min_by_key(|(_, l)| l.lru)
                    .map(|(i, _)| i);
                match cand {
                    Some(i) => i,
                    None => return None,
                }
            }
        };
        let old = set[victim];
        set[victim] = Line {
            tag: line_addr,
            valid: true,
            dirty: rw == Rw::Write,
            lru: tick,
            ready_ps,
            prefetched: prefetch,
            last_touch_cycle: cycle,
        };
        Some(old.valid.then_some(Eviction { line_addr: old.tag, dirty: old.dirty }))
    }
}

/// Per-tile timing context passed to every access.
#[derive(Debug, Clone, Copy)]
pub struct AccessClock {
    /// NoC (and memory controller) period in ps.
    pub noc_period_ps: u64,
}

/// DRAM port of a tile: its channel and the cursor snapshot for this cycle.
#[derive(Debug, Clone)]
pub struct DramPort {
    pub channel: u32,
    /// Memory-controller round trip (DRAM latency + bus to the edge) in cycles.
    pub round_trip_cycles: u64,
    pub occupancy_cycles: u64,
    /// Channel cursor as seen by this tile in the current cycle.
    pub cursor: DramChannelState,
    /// Request cycles issued this cycle, applied to the shared channel later.
    pub issued: Vec<u64>,
}

impl DramPort {
    fn request(&mut self, x: u64) -> u64 {
        self.issued.push(x);
        dram_request(&mut self.cursor, x, self.occupancy_cycles, self.round_trip_cycles)
    }
}

#[derive(Debug, Clone)]
pub struct TileMemory {
    pub slice_base: u64,
    pub slice_len: u64,
    pub sram: SramModel,
    sram_latency_ps: u64,
    word_bits: u64,
    line_bits: u64,
    pub cache: Option<Cache>,
    pub dram: Option<DramPort>,
    next_line: bool,
    pub counters: MemCounters,
}

impl TileMemory {
    /// Scratchpad-only memory for a tile slice.
    pub fn scratchpad(slice_base: u64, slice_len: u64, spm_kib: u32, p: &ModelParams) -> Self {
        let sram = sram_latency_and_energy(spm_kib, p);
        TileMemory {
            slice_base,
            slice_len,
            sram,
            sram_latency_ps: (sram.latency_ns * 1000.0).round() as u64,
            word_bits: p.word_bits as u64,
            line_bits: 0,
            cache: None,
            dram: None,
            next_line: false,
            counters: MemCounters::default(),
        }
    }

    /// Cache-mode memory: `reserved_bytes` of the SPM hold queues.
    pub fn cached(
        slice_base: u64,
        slice_len: u64,
        cfg: &MachineConfig,
        p: &ModelParams,
        reserved_bytes: u64,
        port: DramPort,
    ) -> Self {
        let mut m = Self::scratchpad(slice_base, slice_len, cfg.spm_kib, p);
        let line_bytes = cfg.cacheline_bits as u64 / 8;
        let usable = (cfg.spm_kib as u64 * 1024).saturating_sub(reserved_bytes);
        let addr_bits = 64 - cfg.address_space_bytes().max(2).saturating_sub(1).leading_zeros();
        m.cache = Some(Cache::with_capacity(usable, line_bytes, cfg.spm_mode.ways(), addr_bits));
        m.line_bits = cfg.cacheline_bits as u64;
        m.dram = Some(port);
        m.next_line = cfg.prefetch.next_line();
        m
    }

    pub fn sram_latency_ps(&self) -> u64 {
        self.sram_latency_ps
    }

    fn check(&self, addr: u64) -> Result<(), MemError> {
        if addr < self.slice_base || addr >= self.slice_base + self.slice_len {
            return Err(MemError::RemoteAccess {
                addr,
                base: self.slice_base,
                end: self.slice_base + self.slice_len,
            });
        }
        Ok(())
    }

    /// Latency in ps of a load or store issued at `now_ps`.
    pub fn access(&mut self, addr: u64, rw: Rw, now_ps: u64, clk: AccessClock) -> Result<u64, MemError> {
        self.check(addr)?;
        match rw {
            Rw::Read => {
                self.counters.loads += 1;
                self.counters.sram_read_bits += self.word_bits;
            }
            Rw::Write => {
                self.counters.stores += 1;
                self.counters.sram_write_bits += self.word_bits;
            }
        }
        let Some(cache) = self.cache.as_mut() else {
            return Ok(self.sram_latency_ps);
        };
        self.counters.tag_reads += 1;
        let line_bytes = cache.line_bytes();
        let line = addr / line_bytes;
        let cycle = now_ps / clk.noc_period_ps;
        match cache.lookup(line, rw, cycle) {
            Lookup::Hit { ready_ps, first_use_of_prefetch } => {
                self.counters.hits += 1;
                if first_use_of_prefetch {
                    self.counters.prefetch_useful += 1;
                }
                Ok(ready_ps.saturating_sub(now_ps) + self.sram_latency_ps)
            }
            Lookup::Miss => {
                self.counters.misses += 1;
                let delay_ps = self.fetch_line(line, rw, now_ps, clk, false).unwrap_or(0);
                if self.next_line {
                    let next = line + 1;
                    if (next * line_bytes) < self.slice_base + self.slice_len
                        && !self.cache.as_ref().unwrap().contains(next)
                    {
                        self.counters.prefetch_issued += 1;
                        self.fetch_line(next, Rw::Read, now_ps, clk, true);
                    }
                }
                Ok(self.sram_latency_ps + delay_ps)
            }
        }
    }

    /// Bring a line in from DRAM, writing back a dirty victim first. Returns
    /// the fetch delay in ps, or `None` if a prefetch found no victim.
    fn fetch_line(&mut self, line: u64, rw: Rw, now_ps: u64, clk: AccessClock, prefetch: bool) -> Option<u64> {
        let port = self.dram.as_mut().expect("cache mode always has a DRAM port");
        let x = now_ps / clk.noc_period_ps;
        let delay_cycles = port.request(x);
        let ready_ps = now_ps + delay_cycles * clk.noc_period_ps;
        let cache = self.cache.as_mut().unwrap();
        let evicted = cache.fill(line, rw, ready_ps, x, prefetch)?;
        self.counters.dram_reqs += 1;
        self.counters.dram_read_bits += self.line_bits;
        self.counters.sram_write_bits += self.line_bits;
        if let Some(ev) = evicted {
            self.counters.evictions += 1;
            if ev.dirty {
                self.counters.writebacks += 1;
                self.counters.dram_reqs += 1;
                self.counters.dram_write_bits += self.line_bits;
                self.counters.sram_read_bits += self.line_bits;
                // The writeback takes a channel slot; it does not stall the PU.
                port_after(&mut self.dram, x);
            }
        }
        Some(delay_cycles * clk.noc_period_ps)
    }

    /// Fetch ahead for an address a queued task will touch. No PU stall.
    pub fn prefetch(&mut self, addr: u64, now_ps: u64, clk: AccessClock) {
        let Some(cache) = self.cache.as_ref() else { return };
        if self.check(addr).is_err() {
            return;
        }
        let line = addr / cache.line_bytes();
        if cache.contains(line) {
            return;
        }
        self.counters.prefetch_issued += 1;
        self.fetch_line(line, Rw::Read, now_ps, clk, true);
    }

    pub fn hit_rate(&self) -> f64 {
        let total = self.counters.hits + self.counters.misses;
        if total == 0 {
            1.0
        } else {
            self.counters.hits as f64 / total as f64
        }
    }
}

fn port_after(port: &mut Option<DramPort>, x: u64) {
    if let Some(p) = port.as_mut() {
        p.request(x);
    }
}
