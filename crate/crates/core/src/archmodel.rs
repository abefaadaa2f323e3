//! Description of the design under test (DUT).
//!
//! A [`MachineConfig`] captures the node/package/chiplet/tile hierarchy, the
//! network and memory organization, clock frequencies and software knobs.
//! [`ModelParams`] holds every latency, energy, area and cost constant. Both
//! are read from a flat `key = value` text file where `#` starts a comment
//! and dotted keys group related settings (`dram.channels = 8`).

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown configuration key `{key}` (line {line})")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: invalid value `{value}` for `{key}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        line: usize,
        reason: String,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("invalid configuration: {0}")]
    Invariant(String),
    #[error("cannot read config {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("address {addr:#x} outside the DUT address space of {total:#x} bytes")]
    AddressOutOfRange { addr: u64, total: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpmMode {
    Scratchpad,
    CacheDirect,
    CacheAssoc(u32),
}

impl SpmMode {
    pub fn is_cache(self) -> bool {
        !matches!(self, SpmMode::Scratchpad)
    }

    pub fn ways(self) -> u32 {
        match self {
            SpmMode::Scratchpad => 0,
            SpmMode::CacheDirect => 1,
            SpmMode::CacheAssoc(w) => w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Mesh2d,
    FoldedTorus2d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtraPorts {
    None,
    /// Express links skipping `ruche_stride` tiles; routers get nine ports.
    Ruche,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DramIntegration {
    Interposer2_5d,
    Stacked3d,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DramConfig {
    /// Channels per device; one device is paired with every compute chiplet.
    pub channels: u32,
    pub channel_bw_gbs: f64,
    pub capacity_gb: f64,
    pub integration: DramIntegration,
}

impl Default for DramConfig {
    fn default() -> Self {
        // HBM2E 4-high: eight 64 GB/s channels, 8 GB.
        DramConfig {
            channels: 8,
            channel_bw_gbs: 64.0,
            capacity_gb: 8.0,
            integration: DramIntegration::Interposer2_5d,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TsuPolicy {
    RoundRobin,
    /// Task IDs from highest to lowest priority.
    Priority(Vec<u16>),
    /// Serve the fullest queue once any queue exceeds this fill fraction.
    Occupancy(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arbitration {
    RoundRobin,
    StaticPriority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prefetch {
    None,
    NextLine,
    PointerIndirect,
    Both,
}

impl Prefetch {
    pub fn next_line(self) -> bool {
        matches!(self, Prefetch::NextLine | Prefetch::Both)
    }
    pub fn indirect(self) -> bool {
        matches!(self, Prefetch::PointerIndirect | Prefetch::Both)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineConfig {
    pub tiles_x: u32,
    pub tiles_y: u32,
    pub chiplets_x: u32,
    pub chiplets_y: u32,
    pub packages_x: u32,
    pub packages_y: u32,
    pub nodes_x: u32,
    pub nodes_y: u32,
    pub pus_per_tile: u32,
    pub spm_kib: u32,
    pub spm_mode: SpmMode,
    pub cacheline_bits: u32,
    pub noc_topology: Topology,
    pub noc_width_bits: u32,
    pub extra_ports: ExtraPorts,
    pub ruche_stride: u32,
    pub reduction_tree_degree: u32,
    pub num_physical_nocs: u32,
    pub dram: Option<DramConfig>,
    pub freq_target_pu: f64,
    pub freq_op_pu: f64,
    pub freq_target_noc: f64,
    pub freq_op_noc: f64,
    /// Width of each inter-chiplet link; 0 means same as the NoC.
    pub inter_chiplet_link_width_bits: u32,
    pub inter_node_mux_factor: u32,
    pub iq_capacity: u32,
    pub cq_capacity: u32,
    /// Per-task-ID input queue capacity overrides.
    pub iq_overrides: BTreeMap<u16, u32>,
    pub buffer_slots_per_port: u32,
    pub frame_interval_us: f64,
    pub tsu_policy: TsuPolicy,
    pub arbitration: Arbitration,
    pub prefetch: Prefetch,
    pub process_node_nm: f64,
    /// Omit the destination header word from every message.
    pub no_header: bool,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            tiles_x: 4,
            tiles_y: 4,
            chiplets_x: 1,
            chiplets_y: 1,
            packages_x: 1,
            packages_y: 1,
            nodes_x: 1,
            nodes_y: 1,
            pus_per_tile: 1,
            spm_kib: 256,
            spm_mode: SpmMode::Scratchpad,
            cacheline_bits: 512,
            noc_topology: Topology::Mesh2d,
            noc_width_bits: 64,
            extra_ports: ExtraPorts::None,
            ruche_stride: 4,
            reduction_tree_degree: 0,
            num_physical_nocs: 1,
            dram: None,
            freq_target_pu: 1.0,
            freq_op_pu: 1.0,
            freq_target_noc: 1.0,
            freq_op_noc: 1.0,
            inter_chiplet_link_width_bits: 0,
            inter_node_mux_factor: 1,
            iq_capacity: 64,
            cq_capacity: 64,
            iq_overrides: BTreeMap::new(),
            buffer_slots_per_port: 4,
            frame_interval_us: 40.0,
            tsu_policy: TsuPolicy::RoundRobin,
            arbitration: Arbitration::RoundRobin,
            prefetch: Prefetch::None,
            process_node_nm: 7.0,
            no_header: false,
        }
    }
}

/// Latency, energy, area and cost constants.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub sram_density_mb_mm2: f64,
    pub sram_read_pj_bit: f64,
    pub sram_write_pj_bit: f64,
    pub sram_rw_latency_ns: f64,
    /// Bank size beyond which latency and mux energy grow.
    pub sram_bank_kib: f64,
    pub sram_latency_step_ns: f64,
    pub sram_mux_growth: f64,
    /// Static leakage of the active SRAM banks, in mW per MiB (estimate).
    pub sram_leak_mw_per_mib: f64,
    pub tag_read_cmp_pj: f64,
    pub hbm_device_gb: f64,
    pub hbm_device_mm2: f64,
    pub dram_rw_latency_ns: f64,
    pub dram_rw_pj_bit: f64,
    pub refresh_period_ms: f64,
    pub refresh_pj_bit: f64,
    pub mcm_phy_areal: f64,
    pub mcm_phy_beach: f64,
    pub si_phy_areal: f64,
    pub si_phy_beach: f64,
    pub d2d_latency_ns: f64,
    pub d2d_pj_bit: f64,
    /// Die-to-die energy when DRAM is stacked on the compute die (estimate).
    pub stacked_pj_bit: f64,
    pub noc_wire_ps_mm: f64,
    pub noc_wire_pj_bit_mm: f64,
    pub router_latency_ps: f64,
    pub router_pj_bit: f64,
    pub io_die_latency_ns: f64,
    pub offpkg_pj_bit: f64,
    pub wafer_cost_usd: f64,
    pub wafer_diameter_mm: f64,
    pub scribe_mm: f64,
    pub edge_loss_mm: f64,
    pub defect_density_mm2: f64,
    pub interposer_frac: f64,
    pub substrate_frac: f64,
    pub bonding_frac: f64,
    pub hbm_usd_per_gb: f64,
    pub area_freq_scale: f64,
    pub voltage_c0: f64,
    pub voltage_c_freq: f64,
    pub voltage_c_node: f64,
    // Placeholder PU and router figures; estimates, not measured values.
    pub pu_area_mm2: f64,
    pub router_area_mm2_64b: f64,
    pub mem_ctrl_area_mm2: f64,
    pub inst_int_pj: f64,
    pub inst_fp_pj: f64,
    pub inst_branch_pj: f64,
    pub inst_mem_pj: f64,
    /// Bits moved per scalar load/store.
    pub word_bits: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            sram_density_mb_mm2: 3.5,
            sram_read_pj_bit: 0.18,
            sram_write_pj_bit: 0.28,
            sram_rw_latency_ns: 0.82,
            sram_bank_kib: 512.0,
            sram_latency_step_ns: 1.0,
            sram_mux_growth: 1.5,
            sram_leak_mw_per_mib: 1.0,
            tag_read_cmp_pj: 6.3,
            hbm_device_gb: 8.0,
            hbm_device_mm2: 110.0,
            dram_rw_latency_ns: 50.0,
            dram_rw_pj_bit: 3.7,
            refresh_period_ms: 32.0,
            refresh_pj_bit: 0.22,
            mcm_phy_areal: 690.0,
            mcm_phy_beach: 880.0,
            si_phy_areal: 1070.0,
            si_phy_beach: 1780.0,
            d2d_latency_ns: 4.0,
            d2d_pj_bit: 0.55,
            stacked_pj_bit: 0.05,
            noc_wire_ps_mm: 50.0,
            noc_wire_pj_bit_mm: 0.15,
            router_latency_ps: 500.0,
            router_pj_bit: 0.1,
            io_die_latency_ns: 20.0,
            offpkg_pj_bit: 1.17,
            wafer_cost_usd: 6047.0,
            wafer_diameter_mm: 300.0,
            scribe_mm: 0.2,
            edge_loss_mm: 4.0,
            defect_density_mm2: 0.07,
            interposer_frac: 0.20,
            substrate_frac: 0.10,
            bonding_frac: 0.05,
            hbm_usd_per_gb: 7.5,
            area_freq_scale: 0.5,
            voltage_c0: 0.06,
            voltage_c_freq: 0.13,
            voltage_c_node: 0.06,
            pu_area_mm2: 0.03,
            router_area_mm2_64b: 0.01,
            mem_ctrl_area_mm2: 2.0,
            inst_int_pj: 1.0,
            inst_fp_pj: 2.5,
            inst_branch_pj: 0.8,
            inst_mem_pj: 1.2,
            word_bits: 32.0,
        }
    }
}

macro_rules! param_table {
    ($($name:ident),* $(,)?) => {
        impl ModelParams {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($name)),*];

            fn field_mut(&mut self, key: &str) -> Option<&mut f64> {
                match key {
                    $(stringify!($name) => Some(&mut self.$name),)*
                    _ => None,
                }
            }

            pub fn get(&self, key: &str) -> Option<f64> {
                match key {
                    $(stringify!($name) => Some(self.$name),)*
                    _ => None,
                }
            }
        }
    };
}

param_table!(
    sram_density_mb_mm2, sram_read_pj_bit, sram_write_pj_bit, sram_rw_latency_ns,
    sram_bank_kib, sram_latency_step_ns, sram_mux_growth, sram_leak_mw_per_mib,
    tag_read_cmp_pj, hbm_device_gb, hbm_device_mm2, dram_rw_latency_ns, dram_rw_pj_bit,
    refresh_period_ms, refresh_pj_bit, mcm_phy_areal, mcm_phy_beach, si_phy_areal,
    si_phy_beach, d2d_latency_ns, d2d_pj_bit, stacked_pj_bit, noc_wire_ps_mm,
    noc_wire_pj_bit_mm, router_latency_ps, router_pj_bit, io_die_latency_ns, offpkg_pj_bit,
    wafer_cost_usd, wafer_diameter_mm, scribe_mm, edge_loss_mm, defect_density_mm2,
    interposer_frac, substrate_frac, bonding_frac, hbm_usd_per_gb, area_freq_scale,
    voltage_c0, voltage_c_freq, voltage_c_node, pu_area_mm2, router_area_mm2_64b,
    mem_ctrl_area_mm2, inst_int_pj, inst_fp_pj, inst_branch_pj, inst_mem_pj, word_bits,
);

impl ModelParams {
    pub fn set(&mut self, key: &str, value: f64) -> bool {
        match self.field_mut(key) {
            Some(f) => {
                *f = value;
                true
            }
            None => false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for key in Self::KEYS {
            let v = self.get(key).unwrap();
            if !(v > 0.0) || !v.is_finite() {
                return Err(ConfigError::Invariant(format!("parameter {key} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TileCoord {
    pub x: u32,
    pub y: u32,
}

impl TileCoord {
    pub fn new(x: u32, y: u32) -> Self {
        TileCoord { x, y }
    }
}

impl std::fmt::Display for TileCoord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Level of the hierarchy a link crosses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    Noc = 0,
    Chiplet = 1,
    Package = 2,
    Node = 3,
}

impl MachineConfig {
    /// Global tile grid; the hierarchy is flattened so that chiplet,
    /// package and node boundaries fall on grid lines.
    pub fn global_grid(&self) -> (u32, u32) {
        (
            self.tiles_x * self.chiplets_x * self.packages_x * self.nodes_x,
            self.tiles_y * self.chiplets_y * self.packages_y * self.nodes_y,
        )
    }

    pub fn tile_count(&self) -> u64 {
        let (w, h) = self.global_grid();
        w as u64 * h as u64
    }

    pub fn chiplet_count(&self) -> u64 {
        (self.chiplets_x * self.packages_x * self.nodes_x) as u64
            * (self.chiplets_y * self.packages_y * self.nodes_y) as u64
    }

    pub fn package_count(&self) -> u64 {
        (self.packages_x * self.nodes_x) as u64 * (self.packages_y * self.nodes_y) as u64
    }

    pub fn tiles_per_chiplet(&self) -> u64 {
        self.tiles_x as u64 * self.tiles_y as u64
    }

    pub fn coord_of(&self, index: u64) -> TileCoord {
        let (w, _) = self.global_grid();
        TileCoord::new((index % w as u64) as u32, (index / w as u64) as u32)
    }

    pub fn index_of(&self, c: TileCoord) -> u64 {
        let (w, _) = self.global_grid();
        c.y as u64 * w as u64 + c.x as u64
    }

    /// Bytes of address space owned by each tile.
    pub fn slice_bytes(&self) -> u64 {
        match (&self.dram, self.spm_mode.is_cache()) {
            (Some(d), true) => {
                let total = d.capacity_gb * (1u64 << 30) as f64 * self.chiplet_count() as f64;
                // Round down to whole cachelines.
                let line = (self.cacheline_bits / 8) as u64;
                let per = (total / self.tile_count() as f64) as u64;
                per / line * line
            }
            _ => self.spm_kib as u64 * 1024,
        }
    }

    pub fn address_space_bytes(&self) -> u64 {
        self.slice_bytes() * self.tile_count()
    }

    pub fn tile_of_address(&self, addr: u64) -> Result<TileCoord, ConfigError> {
        let total = self.address_space_bytes();
        if addr >= total {
            return Err(ConfigError::AddressOutOfRange { addr, total });
        }
        Ok(self.coord_of(addr / self.slice_bytes()))
    }

    pub fn slice_base(&self, c: TileCoord) -> u64 {
        self.index_of(c) * self.slice_bytes()
    }

    /// Hierarchy level crossed between two adjacent grid positions along one axis.
    pub fn boundary_level_x(&self, a: u32, b: u32) -> Level {
        boundary_level(a, b, self.tiles_x, self.chiplets_x, self.packages_x)
    }

    pub fn boundary_level_y(&self, a: u32, b: u32) -> Level {
        boundary_level(a, b, self.tiles_y, self.chiplets_y, self.packages_y)
    }

    pub fn ports_per_router(&self) -> usize {
        match self.extra_ports {
            ExtraPorts::None => 5,
            ExtraPorts::Ruche => 9,
        }
    }

    pub fn iq_capacity_for(&self, task: u16) -> u32 {
        self.iq_overrides.get(&task).copied().unwrap_or(self.iq_capacity)
    }

    /// Longest shortest path between two routers, in hops.
    pub fn network_diameter(&self) -> u64 {
        let (ax, ay) = self.axis_graphs();
        (ax.diameter() + ay.diameter()) as u64
    }

    /// Axis graphs for X and Y. The folded torus wraps within a node; when an
    /// axis spans several nodes it is a mesh end to end.
    pub fn axis_graphs(&self) -> (AxisGraph, AxisGraph) {
        let (w, h) = self.global_grid();
        let torus = self.noc_topology == Topology::FoldedTorus2d;
        (
            AxisGraph::new(w, torus && self.nodes_x == 1, self.express_stride()),
            AxisGraph::new(h, torus && self.nodes_y == 1, self.express_stride()),
        )
    }

    pub fn express_stride(&self) -> Option<u32> {
        match self.extra_ports {
            ExtraPorts::Ruche if self.ruche_stride > 1 => Some(self.ruche_stride),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let counts = [
            ("tiles_x", self.tiles_x),
            ("tiles_y", self.tiles_y),
            ("chiplets_x", self.chiplets_x),
            ("chiplets_y", self.chiplets_y),
            ("packages_x", self.packages_x),
            ("packages_y", self.packages_y),
            ("nodes_x", self.nodes_x),
            ("nodes_y", self.nodes_y),
            ("pus_per_tile", self.pus_per_tile),
            ("spm_kib", self.spm_kib),
            ("cacheline_bits", self.cacheline_bits),
            ("noc_width_bits", self.noc_width_bits),
            ("inter_node_mux_factor", self.inter_node_mux_factor),
            ("iq_capacity", self.iq_capacity),
            ("cq_capacity", self.cq_capacity),
            ("buffer_slots_per_port", self.buffer_slots_per_port),
            ("ruche_stride", self.ruche_stride),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(ConfigError::Invariant(format!("{k} must be >= 1")));
            }
        }
        if !(1..=3).contains(&self.num_physical_nocs) {
            return Err(ConfigError::Invariant("num_physical_nocs must be in [1,3]".into()));
        }
        if self.spm_mode.is_cache() && self.dram.is_none() {
            return Err(ConfigError::Invariant("cache mode requires DRAM".into()));
        }
        if let SpmMode::CacheAssoc(w) = self.spm_mode {
            if w == 0 {
                return Err(ConfigError::Invariant("cache_assoc needs >= 1 way".into()));
            }
        }
        if self.cacheline_bits % 8 != 0 {
            return Err(ConfigError::Invariant("cacheline_bits must be a multiple of 8".into()));
        }
        if let Some(d) = &self.dram {
            if d.channels == 0 || !(d.channel_bw_gbs > 0.0) || !(d.capacity_gb > 0.0) {
                return Err(ConfigError::Invariant("dram parameters must be positive".into()));
            }
        }
        for (k, v) in [
            ("freq_target_pu", self.freq_target_pu),
            ("freq_op_pu", self.freq_op_pu),
            ("freq_target_noc", self.freq_target_noc),
            ("freq_op_noc", self.freq_op_noc),
            ("frame_interval_us", self.frame_interval_us),
            ("process_node_nm", self.process_node_nm),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(ConfigError::Invariant(format!("{k} must be > 0")));
            }
        }
        if self.extra_ports == ExtraPorts::Ruche && self.noc_topology != Topology::Mesh2d {
            return Err(ConfigError::Invariant("ruche express links require mesh2d".into()));
        }
        if self.noc_topology == Topology::FoldedTorus2d && self.buffer_slots_per_port < 2 {
            return Err(ConfigError::Invariant(
                "folded torus needs at least 2 buffer slots per port".into(),
            ));
        }
        if let TsuPolicy::Occupancy(t) = self.tsu_policy {
            if !(0.0..=1.0).contains(&t) {
                return Err(ConfigError::Invariant("occupancy threshold must be in [0,1]".into()));
            }
        }
        Ok(())
    }

    /// Stable digest of the DUT description, embedded in counters files.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_config_string().as_bytes());
        hex::encode(&h.finalize()[..8])
    }

    /// Serialize every key; parsing the result yields an equal config.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("tiles_x", self.tiles_x.to_string());
        kv("tiles_y", self.tiles_y.to_string());
        kv("chiplets_x", self.chiplets_x.to_string());
        kv("chiplets_y", self.chiplets_y.to_string());
        kv("packages_x", self.packages_x.to_string());
        kv("packages_y", self.packages_y.to_string());
        kv("nodes_x", self.nodes_x.to_string());
        kv("nodes_y", self.nodes_y.to_string());
        kv("pus_per_tile", self.pus_per_tile.to_string());
        kv("spm_kib", self.spm_kib.to_string());
        kv(
            "spm_mode",
            match self.spm_mode {
                SpmMode::Scratchpad => "scratchpad".into(),
                SpmMode::CacheDirect => "cache_direct".into(),
                SpmMode::CacheAssoc(w) => format!("cache_assoc:{w}"),
            },
        );
        kv("cacheline_bits", self.cacheline_bits.to_string());
        kv(
            "noc_topology",
            match self.noc_topology {
                Topology::Mesh2d => "mesh2d".into(),
                Topology::FoldedTorus2d => "folded_torus2d".into(),
            },
        );
        kv("noc_width_bits", self.noc_width_bits.to_string());
        kv(
            "extra_ports",
            match self.extra_ports {
                ExtraPorts::None => "none".into(),
                ExtraPorts::Ruche => "ruche".into(),
            },
        );
        kv("ruche_stride", self.ruche_stride.to_string());
        kv("reduction_tree_degree", self.reduction_tree_degree.to_string());
        kv("num_physical_nocs", self.num_physical_nocs.to_string());
        if let Some(d) = &self.dram {
            kv("dram.channels", d.channels.to_string());
            kv("dram.channel_bw_gbs", fmt_f64(d.channel_bw_gbs));
            kv("dram.capacity_gb", fmt_f64(d.capacity_gb));
            kv(
                "dram.integration",
                match d.integration {
                    DramIntegration::Interposer2_5d => "interposer_2_5d".into(),
                    DramIntegration::Stacked3d => "stacked_3d".into(),
                },
            );
        }
        kv("freq_target_pu", fmt_f64(self.freq_target_pu));
        kv("freq_op_pu", fmt_f64(self.freq_op_pu));
        kv("freq_target_noc", fmt_f64(self.freq_target_noc));
        kv("freq_op_noc", fmt_f64(self.freq_op_noc));
        kv("inter_chiplet_link_width_bits", self.inter_chiplet_link_width_bits.to_string());
        kv("inter_node_mux_factor", self.inter_node_mux_factor.to_string());
        kv("queue.iq_capacity", self.iq_capacity.to_string());
        kv("queue.cq_capacity", self.cq_capacity.to_string());
        for (t, c) in &self.iq_overrides {
            kv(&format!("queue.iq.{t}"), c.to_string());
        }
        kv("buffer_slots_per_port", self.buffer_slots_per_port.to_string());
        kv("frame_interval_us", fmt_f64(self.frame_interval_us));
        kv(
            "tsu_policy",
            match &self.tsu_policy {
                TsuPolicy::RoundRobin => "round_robin".into(),
                TsuPolicy::Priority(order) => format!(
                    "priority:{}",
                    order.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")
                ),
                TsuPolicy::Occupancy(t) => format!("occupancy:{}", fmt_f64(*t)),
            },
        );
        kv(
            "arbitration",
            match self.arbitration {
                Arbitration::RoundRobin => "round_robin".into(),
                Arbitration::StaticPriority => "static".into(),
            },
        );
        kv(
            "prefetch",
            match self.prefetch {
                Prefetch::None => "none".into(),
                Prefetch::NextLine => "next_line".into(),
                Prefetch::PointerIndirect => "pointer_indirect".into(),
                Prefetch::Both => "both".into(),
            },
        );
        kv("process_node_nm", fmt_f64(self.process_node_nm));
        kv("no_header", self.no_header.to_string());
        s
    }
}

fn boundary_level(a: u32, b: u32, tiles: u32, chiplets: u32, packages: u32) -> Level {
    let chiplet = |p: u32| p / tiles;
    let package = |p: u32| p / (tiles * chiplets);
    let node = |p: u32| p / (tiles * chiplets * packages);
    if node(a) != node(b) {
        Level::Node
    } else if package(a) != package(b) {
        Level::Package
    } else if chiplet(a) != chiplet(b) {
        Level::Chiplet
    } else {
        Level::Noc
    }
}

/// One dimension of the router graph: a line, a ring (folded torus) or a
/// line with express links. The 2D network is the Cartesian product of the
/// two axes, so 2D distances are sums of axis distances.
#[derive(Debug, Clone)]
pub struct AxisGraph {
    len: u32,
    ring: bool,
    stride: Option<u32>,
    dist: Vec<u16>,
    /// First DOR step from `cur` towards `dest`, indexed `cur * len + dest`.
    next: Vec<Option<AxisStep>>,
}

/// A single move along an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisStep {
    Plus,
    Minus,
    ExpressPlus,
    ExpressMinus,
}

impl AxisGraph {
    pub fn new(len: u32, ring: bool, stride: Option<u32>) -> Self {
        let ring = ring && len > 2;
        let mut g = AxisGraph { len, ring, stride, dist: Vec::new(), next: Vec::new() };
        let n = len as usize;
        g.dist = vec![u16::MAX; n * n];
        for s in 0..n {
            let row = &mut g.dist[s * n..(s + 1) * n];
            row[s] = 0;
            let mut q = VecDeque::from([s as u32]);
            while let Some(u) = q.pop_front() {
                let du = row[u as usize];
                for step in [AxisStep::Plus, AxisStep::Minus, AxisStep::ExpressPlus, AxisStep::ExpressMinus] {
                    if let Some(v) = Self::neighbor_raw(len, ring, stride, u, step) {
                        if row[v as usize] == u16::MAX {
                            row[v as usize] = du + 1;
                            q.push_back(v);
                        }
                    }
                }
            }
        }
        g.next = (0..n * n).map(|i| g.compute_step((i / n) as u32, (i % n) as u32)).collect();
        g
    }

    fn neighbor_raw(len: u32, ring: bool, stride: Option<u32>, u: u32, step: AxisStep) -> Option<u32> {
        match step {
            AxisStep::Plus if u + 1 < len => Some(u + 1),
            AxisStep::Plus if ring => Some(0),
            AxisStep::Minus if u > 0 => Some(u - 1),
            AxisStep::Minus if ring => Some(len - 1),
            AxisStep::ExpressPlus => stride.filter(|s| u + s < len).map(|s| u + s),
            AxisStep::ExpressMinus => stride.filter(|s| u >= *s).map(|s| u - s),
            _ => None,
        }
    }

    pub fn neighbor(&self, u: u32, step: AxisStep) -> Option<u32> {
        Self::neighbor_raw(self.len, self.ring, self.stride, u, step)
    }

    pub fn is_ring(&self) -> bool {
        self.ring
    }

    pub fn distance(&self, a: u32, b: u32) -> u32 {
        self.dist[a as usize * self.len as usize + b as usize] as u32
    }

    /// Next move from `cur` toward `dest` on a shortest path. Express links
    /// are preferred; remaining ties go in the positive direction.
    pub fn next_step(&self, cur: u32, dest: u32) -> Option<AxisStep> {
        self.next[(cur * self.len + dest) as usize]
    }

    fn compute_step(&self, cur: u32, dest: u32) -> Option<AxisStep> {
        if cur == dest {
            return None;
        }
        let d = self.distance(cur, dest);
        let express = if dest > cur {
            [AxisStep::ExpressPlus, AxisStep::ExpressMinus]
        } else {
            [AxisStep::ExpressMinus, AxisStep::ExpressPlus]
        };
        express
            .into_iter()
            .chain([AxisStep::Plus, AxisStep::Minus])
            .find(|&s| self.neighbor(cur, s).is_some_and(|v| self.distance(v, dest) + 1 == d))
    }

    pub fn diameter(&self) -> u32 {
        self.dist.iter().copied().max().unwrap_or(0) as u32
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    // `{}` on f64 is the shortest representation that round-trips exactly.
    format!("{v}")
}

/// Parsed configuration file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub machine: MachineConfig,
    pub params: ModelParams,
}

impl Config {
    pub fn to_config_string(&self) -> String {
        let mut s = self.machine.to_config_string();
        for k in ModelParams::KEYS {
            let _ = writeln!(s, "{k} = {}", fmt_f64(self.params.get(k).unwrap()));
        }
        s
    }

    /// Digest of machine and parameters, embedded in counters files.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_config_string().as_bytes());
        hex::encode(&h.finalize()[..8])
    }

    /// Apply one `key=value` override on top of the current values.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        apply_key(self, key.trim(), value.trim(), 0)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.machine.validate()?;
        self.params.validate()
    }
}

pub fn parse_config(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<Config, ConfigError> {
    parse_with_overrides(text, &[])
}

/// Parse file contents, then apply `key=value` overrides, then validate.
pub fn parse_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<Config, ConfigError> {
    let mut cfg = Config::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax { line: i + 1 });
        };
        apply_key(&mut cfg, k.trim(), v.trim(), i + 1)?;
    }
    for (k, v) in overrides {
        apply_key(&mut cfg, k.trim(), v.trim(), 0)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Split `k=v` pairs from the command line.
pub fn split_override(s: &str) -> Result<(String, String), ConfigError> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or(ConfigError::Syntax { line: 0 })
}

fn apply_key(cfg: &mut Config, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
    let bad = |reason: &str| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        line,
        reason: reason.to_string(),
    };
    let uint = || value.parse::<u32>().map_err(|_| bad("expected a non-negative integer"));
    let float = || value.parse::<f64>().map_err(|_| bad("expected a number"));
    let m = &mut cfg.machine;
    match key {
        "tiles_x" => m.tiles_x = uint()?,
        "tiles_y" => m.tiles_y = uint()?,
        "chiplets_x" => m.chiplets_x = uint()?,
        "chiplets_y" => m.chiplets_y = uint()?,
        "packages_x" => m.packages_x = uint()?,
        "packages_y" => m.packages_y = uint()?,
        "nodes_x" => m.nodes_x = uint()?,
        "nodes_y" => m.nodes_y = uint()?,
        "pus_per_tile" => m.pus_per_tile = uint()?,
        "spm_kib" => m.spm_kib = uint()?,
        "spm_mode" => {
            m.spm_mode = match value {
                "scratchpad" => SpmMode::Scratchpad,
                "cache_direct" => SpmMode::CacheDirect,
                v if v.starts_with("cache_assoc") => {
                    let ways = v
                        .strip_prefix("cache_assoc")
                        .and_then(|r| r.strip_prefix(':').or(Some(r)).filter(|r| !r.is_empty()))
                        .map(|r| r.parse::<u32>().map_err(|_| bad("bad way count")))
                        .transpose()?
                        .unwrap_or(4);
                    SpmMode::CacheAssoc(ways)
                }
                _ => return Err(bad("expected scratchpad, cache_direct or cache_assoc:<ways>")),
            }
        }
        "cacheline_bits" => m.cacheline_bits = uint()?,
        "noc_topology" => {
            m.noc_topology = match value {
                "mesh2d" | "mesh" => Topology::Mesh2d,
                "folded_torus2d" | "torus" => Topology::FoldedTorus2d,
                _ => return Err(bad("expected mesh2d or folded_torus2d")),
            }
        }
        "noc_width_bits" => m.noc_width_bits = uint()?,
        "extra_ports" => {
            m.extra_ports = match value {
                "none" => ExtraPorts::None,
                "ruche" | "hierarchical" => ExtraPorts::Ruche,
                _ => return Err(bad("expected none or ruche")),
            }
        }
        "ruche_stride" => m.ruche_stride = uint()?,
        "reduction_tree_degree" => m.reduction_tree_degree = uint()?,
        "num_physical_nocs" => m.num_physical_nocs = uint()?,
        k if k.starts_with("dram.") => {
            let d = m.dram.get_or_insert_with(DramConfig::default);
            match &k[5..] {
                "enabled" => {
                    let on: bool = value.parse().map_err(|_| bad("expected true or false"))?;
                    if !on {
                        m.dram = None;
                    }
                }
                "channels" => d.channels = uint()?,
                "channel_bw_gbs" => d.channel_bw_gbs = float()?,
                "capacity_gb" => d.capacity_gb = float()?,
                "integration" => {
                    d.integration = match value {
                        "interposer_2_5d" => DramIntegration::Interposer2_5d,
                        "stacked_3d" => DramIntegration::Stacked3d,
                        _ => return Err(bad("expected interposer_2_5d or stacked_3d")),
                    }
                }
                _ => return Err(ConfigError::UnknownKey { key: key.into(), line }),
            }
        }
        "freq_target_pu" => m.freq_target_pu = float()?,
        "freq_op_pu" => m.freq_op_pu = float()?,
        "freq_target_noc" => m.freq_target_noc = float()?,
        "freq_op_noc" => m.freq_op_noc = float()?,
        "inter_chiplet_link_width_bits" => m.inter_chiplet_link_width_bits = uint()?,
        "inter_node_mux_factor" => m.inter_node_mux_factor = uint()?,
        "queue.iq_capacity" => m.iq_capacity = uint()?,
        "queue.cq_capacity" => m.cq_capacity = uint()?,
        k if k.starts_with("queue.iq.") => {
            let id: u16 = k[9..]
                .parse()
                .map_err(|_| ConfigError::UnknownKey { key: key.into(), line })?;
            m.iq_overrides.insert(id, uint()?);
        }
        "buffer_slots_per_port" => m.buffer_slots_per_port = uint()?,
        "frame_interval_us" => m.frame_interval_us = float()?,
        "tsu_policy" => {
            m.tsu_policy = if value == "round_robin" {
                TsuPolicy::RoundRobin
            } else if let Some(list) = value.strip_prefix("priority:") {
                let order = list
                    .split(',')
                    .map(|t| t.trim().parse::<u16>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| bad("expected priority:<id>,<id>,..."))?;
                TsuPolicy::Priority(order)
            } else if let Some(t) = value.strip_prefix("occupancy:") {
                TsuPolicy::Occupancy(t.parse().map_err(|_| bad("expected occupancy:<fraction>"))?)
            } else {
                return Err(bad("expected round_robin, priority:<ids> or occupancy:<fraction>"));
            }
        }
        "arbitration" => {
            m.arbitration = match value {
                "round_robin" => Arbitration::RoundRobin,
                "static" => Arbitration::StaticPriority,
                _ => return Err(bad("expected round_robin or static")),
            }
        }
        "prefetch" => {
            m.prefetch = match value {
                "none" => Prefetch::None,
                "next_line" => Prefetch::NextLine,
                "pointer_indirect" => Prefetch::PointerIndirect,
                "both" => Prefetch::Both,
                _ => return Err(bad("expected none, next_line, pointer_indirect or both")),
            }
        }
        "process_node_nm" => m.process_node_nm = float()?,
        "no_header" => m.no_header = value.parse().map_err(|_| bad("expected true or false"))?,
        k => {
            if ModelParams::KEYS.contains(&k) {
                let v = float()?;
                cfg.params.set(k, v);
            } else {
                return Err(ConfigError::UnknownKey { key: key.into(), line });
            }
        }
    }
    Ok(())
}

/// Hop distance between two tiles following the configured routing.
pub fn route_distance(cfg: &MachineConfig, a: TileCoord, b: TileCoord) -> u64 {
    let (ax, ay) = cfg.axis_graphs();
    (ax.distance(a.x, b.x) + ay.distance(a.y, b.y)) as u64
}

/// Breadth-first all-pairs search over the physical router graph; returns the
/// diameter. Quadratic in tile count, so only meant for small grids.
pub fn brute_force_diameter(cfg: &MachineConfig) -> u64 {
    let (w, h) = cfg.global_grid();
    let n = (w * h) as usize;
    let adj = router_graph(cfg);
    let mut best = 0;
    for s in 0..n {
        let mut dist = vec![u64::MAX; n];
        dist[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if dist[v] == u64::MAX {
                    dist[v] = dist[u] + 1;
                    q.push_back(v);
                }
            }
        }
        best = best.max(*dist.iter().max().unwrap());
    }
    best
}

/// Physical links of the router graph (undirected adjacency lists).
pub fn router_graph(cfg: &MachineConfig) -> Vec<Vec<usize>> {
    let (w, h) = cfg.global_grid();
    let torus = cfg.noc_topology == Topology::FoldedTorus2d;
    let (ring_x, ring_y) = (torus && cfg.nodes_x == 1 && w > 2, torus && cfg.nodes_y == 1 && h > 2);
    let idx = |x: u32, y: u32| (y * w + x) as usize;
    let mut adj = vec![Vec::new(); (w * h) as usize];
    let mut link = |a: usize, b: usize| {
        if a != b && !adj[a].contains(&b) {
            adj[a].push(b);
            adj[b].push(a);
        }
    };
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                link(idx(x, y), idx(x + 1, y));
            }
            if y + 1 < h {
                link(idx(x, y), idx(x, y + 1));
            }
            if ring_x && x == 0 {
                link(idx(0, y), idx(w - 1, y));
            }
            if ring_y && y == 0 {
                link(idx(x, 0), idx(x, h - 1));
            }
            if let Some(s) = cfg.express_stride() {
                if x + s < w {
                    link(idx(x, y), idx(x + s, y));
                }
                if y + s < h {
                    link(idx(x, y), idx(x, y + s));
                }
            }
        }
    }
    adj
}
