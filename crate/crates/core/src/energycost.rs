//! Energy, area and cost models.
//!
//! Everything here is a pure function of a counters file, a machine
//! configuration and the model parameters, so a finished run can be
//! re-evaluated with different parameters without simulating again.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::archmodel::{fmt_f64, parse_with_overrides, Config, ConfigError, DramIntegration, ExtraPorts, MachineConfig, ModelParams};
use crate::memory::sram_latency_and_energy;

#[derive(Debug, Error)]
pub enum CostError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error("counters file line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("config checksum {config} does not match counters file checksum {counters}")]
    ChecksumMismatch { config: String, counters: String },
    #[error("counter `{0}` is missing")]
    MissingCounter(String),
    #[error("{edge} edge needs {required:.1} Gbit/s/mm of beachfront but only {available:.1} is available")]
    Beachfront { edge: String, required: f64, available: f64 },
}

pub fn voltage(freq_ghz: f64, node_nm: f64, p: &ModelParams) -> f64 {
    p.voltage_c0 + p.voltage_c_freq * freq_ghz + p.voltage_c_node * node_nm
}

/// Dynamic-energy multiplier relative to the 1 GHz voltage.
pub fn voltage_scale(freq_ghz: f64, node_nm: f64, p: &ModelParams) -> f64 {
    let r = voltage(freq_ghz, node_nm, p) / voltage(1.0, node_nm, p);
    r * r
}

/// Counters dumped at the end of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CounterSet {
    pub checksum: String,
    pub grid: (u32, u32),
    pub noc_cycles: u64,
    pub pu_cycles: u64,
    pub counters: BTreeMap<String, u64>,
}

pub const COUNTERS_MAGIC: &str = "# manysim counters v1";

impl CounterSet {
    pub fn get(&self, name: &str) -> u64 {
        self.counters.get(name).copied().unwrap_or(0)
    }

    pub fn require(&self, name: &str) -> Result<u64, CostError> {
        self.counters.get(name).copied().ok_or_else(|| CostError::MissingCounter(name.into()))
    }

    pub fn set(&mut self, name: impl Into<String>, v: u64) {
        self.counters.insert(name.into(), v);
    }

    /// Sum of every counter whose name starts with `prefix`.
    pub fn sum_prefix(&self, prefix: &str) -> u64 {
        self.counters.range(prefix.to_string()..).take_while(|(k, _)| k.starts_with(prefix)).map(|(_, v)| v).sum()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{COUNTERS_MAGIC}").unwrap();
        writeln!(s, "# checksum {}", self.checksum).unwrap();
        writeln!(s, "# grid {} {}", self.grid.0, self.grid.1).unwrap();
        writeln!(s, "# runtime noc_cycles={} pu_cycles={}", self.noc_cycles, self.pu_cycles).unwrap();
        for (k, v) in &self.counters {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    pub fn parse(text: &str) -> Result<CounterSet, CostError> {
        let mut cs = CounterSet::default();
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, msg: &str| CostError::Format { line: line + 1, msg: msg.into() };
        match lines.next() {
            Some((_, l)) if l.trim() == COUNTERS_MAGIC => {}
            _ => return Err(bad(0, "missing counters header")),
        }
        let mut seen = 0;
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                let mut it = h.split_whitespace();
                match it.next() {
                    Some("checksum") => {
                        cs.checksum = it.next().ok_or_else(|| bad(i, "empty checksum"))?.to_string();
                        seen |= 1;
                    }
                    Some("grid") => {
                        let mut n = || it.next().and_then(|v| v.parse::<u32>().ok()).ok_or_else(|| bad(i, "bad grid"));
                        cs.grid = (n()?, n()?);
                        seen |= 2;
                    }
                    Some("runtime") => {
                        for kv in it {
                            let (k, v) = kv.split_once('=').ok_or_else(|| bad(i, "bad runtime field"))?;
                            let v: u64 = v.parse().map_err(|_| bad(i, "bad runtime value"))?;
                            match k {
                                "noc_cycles" => cs.noc_cycles = v,
                                "pu_cycles" => cs.pu_cycles = v,
                                _ => return Err(bad(i, "unknown runtime field")),
                            }
                        }
                        seen |= 4;
                    }
                    _ => {}
                }
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad(i, "expected `name = value`"))?;
            let v: u64 = v.trim().parse().map_err(|_| bad(i, "counter values are non-negative integers"))?;
            cs.counters.insert(k.trim().to_string(), v);
        }
        if seen != 7 {
            return Err(bad(0, "incomplete header"));
        }
        Ok(cs)
    }

    pub fn write(&self, path: &Path) -> Result<(), CostError> {
        std::fs::write(path, self.render()).map_err(|e| CostError::Io { path: path.display().to_string(), msg: e.to_string() })
    }

    pub fn read(path: &Path) -> Result<CounterSet, CostError> {
        let text = std::fs::read_to_string(path).map_err(|e| CostError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        Self::parse(&text)
    }
}

/// Named line items whose total is their sum in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Breakdown {
    pub items: Vec<(String, f64)>,
}

impl Breakdown {
    fn push(&mut self, name: &str, v: f64) {
        self.items.push((name.to_string(), v));
    }

    pub fn total(&self) -> f64 {
        self.items.iter().fold(0.0, |acc, (_, v)| acc + v)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.items.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreaReport {
    pub tile_mm2: f64,
    pub tile_side_mm: f64,
    /// One compute chiplet, in mm².
    pub chiplet: Breakdown,
    /// One package: dies plus DRAM footprint.
    pub package: Breakdown,
    pub system_mm2: f64,
    /// Compute silicon only, for power density.
    pub silicon_mm2: f64,
}

fn freq_area_factor(f_target: f64, p: &ModelParams) -> f64 {
    1.0 + p.area_freq_scale * (f_target - 1.0)
}

pub fn sram_area_mm2(spm_kib: u32, p: &ModelParams) -> f64 {
    spm_kib as f64 / 1024.0 / p.sram_density_mb_mm2
}

pub fn tile_area_mm2(cfg: &MachineConfig, p: &ModelParams) -> f64 {
    let pu = p.pu_area_mm2 * cfg.pus_per_tile as f64 * freq_area_factor(cfg.freq_target_pu, p);
    tile_sram_router(cfg, p) + pu
}

fn router_area(cfg: &MachineConfig, p: &ModelParams) -> f64 {
    p.router_area_mm2_64b * (cfg.noc_width_bits as f64 / 64.0) * (cfg.ports_per_router() as f64 / 5.0)
        * cfg.num_physical_nocs as f64
        * freq_area_factor(cfg.freq_target_noc, p)
}

fn tile_sram_router(cfg: &MachineConfig, p: &ModelParams) -> f64 {
    sram_area_mm2(cfg.spm_kib, p) + router_area(cfg, p)
}

pub fn tile_side_mm(cfg: &MachineConfig, p: &ModelParams) -> f64 {
    tile_area_mm2(cfg, p).sqrt()
}

/// Inter-chiplet link bandwidth crossing one chiplet side, in Gbit/s.
fn side_bandwidth_gbps(cfg: &MachineConfig, links_along_side: u32) -> f64 {
    let width = match cfg.inter_chiplet_link_width_bits {
        0 => cfg.noc_width_bits,
        w => w,
    } as f64;
    let per_row = 1 + match cfg.extra_ports {
        ExtraPorts::Ruche => cfg.ruche_stride.saturating_sub(1),
        ExtraPorts::None => 0,
    };
    // Both directions of every link.
    2.0 * links_along_side as f64 * per_row as f64 * width * cfg.freq_op_noc * cfg.num_physical_nocs as f64
}

pub fn compute_area(cfg: &MachineConfig, p: &ModelParams) -> Result<AreaReport, CostError> {
    let tiles = cfg.tiles_per_chiplet() as f64;
    let tile_mm2 = tile_area_mm2(cfg, p);
    let side = tile_mm2.sqrt();
    let mut chip = Breakdown::default();
    chip.push("sram", tiles * sram_area_mm2(cfg.spm_kib, p));
    chip.push("pu", tiles * p.pu_area_mm2 * cfg.pus_per_tile as f64 * freq_area_factor(cfg.freq_target_pu, p));
    chip.push("router", tiles * router_area(cfg, p));

    let (w_mm, h_mm) = (cfg.tiles_x as f64 * side, cfg.tiles_y as f64 * side);
    let multi_x = cfg.chiplets_x * cfg.packages_x * cfg.nodes_x > 1;
    let multi_y = cfg.chiplets_y * cfg.packages_y * cfg.nodes_y > 1;
    let mut phy_gbps = 0.0;
    let check = |edge: &str, gbps: f64, len_mm: f64, beach: f64| -> Result<(), CostError> {
        let required = gbps / len_mm;
        if required > beach {
            return Err(CostError::Beachfront { edge: edge.into(), required, available: beach });
        }
        Ok(())
    };
    if multi_x {
        let bw = side_bandwidth_gbps(cfg, cfg.tiles_y);
        check("east/west", bw, h_mm, p.mcm_phy_beach)?;
        phy_gbps += 2.0 * bw;
    }
    if multi_y {
        let bw = side_bandwidth_gbps(cfg, cfg.tiles_x);
        check("north/south", bw, w_mm, p.mcm_phy_beach)?;
        phy_gbps += 2.0 * bw;
    }
    chip.push("phy.d2d", phy_gbps / p.mcm_phy_areal);
    if let Some(d) = &cfg.dram {
        let gbps = d.channels as f64 * d.channel_bw_gbs * 8.0;
        if d.integration == DramIntegration::Interposer2_5d {
            check("memory", gbps, w_mm, p.si_phy_beach)?;
        }
        chip.push("phy.dram", gbps / p.si_phy_areal);
        chip.push("mem_ctrl", p.mem_ctrl_area_mm2);
    }
    let die = chip.total();

    let per_pkg = (cfg.chiplets_x * cfg.chiplets_y) as f64;
    let mut pkg = Breakdown::default();
    pkg.push("compute_dies", per_pkg * die);
    match &cfg.dram {
        Some(d) if d.integration == DramIntegration::Interposer2_5d => pkg.push("hbm_footprint", per_pkg * p.hbm_device_mm2),
        Some(_) => pkg.push("hbm_footprint", per_pkg * (p.hbm_device_mm2 - die).max(0.0)),
        None => {}
    }
    let packages = cfg.package_count() as f64;
    Ok(AreaReport {
        tile_mm2,
        tile_side_mm: side,
        system_mm2: packages * pkg.total(),
        silicon_mm2: packages * per_pkg * die,
        chiplet: chip,
        package: pkg,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    /// Joules per component class.
    pub items: Breakdown,
    pub runtime_s: f64,
    pub avg_power_w: f64,
    pub power_density_w_mm2: f64,
}

/// Simulated runtime per clock domain, in seconds.
pub fn runtime_seconds(cs: &CounterSet, cfg: &MachineConfig) -> (f64, f64) {
    (cs.noc_cycles as f64 / cfg.freq_op_noc * 1e-9, cs.pu_cycles as f64 / cfg.freq_op_pu * 1e-9)
}

const PJ: f64 = 1e-12;

pub fn compute_energy(cs: &CounterSet, cfg: &MachineConfig, p: &ModelParams, area: &AreaReport) -> Result<EnergyReport, CostError> {
    let (t_noc, t_pu) = runtime_seconds(cs, cfg);
    let runtime_s = t_noc.max(t_pu);
    let node = cfg.process_node_nm;
    let s_pu = voltage_scale(cfg.freq_op_pu, node, p);
    let s_noc = voltage_scale(cfg.freq_op_noc, node, p);
    let sram = sram_latency_and_energy(cfg.spm_kib, p);
    let width = cfg.noc_width_bits as f64;
    let c = |n: &str| cs.require(n).map(|v| v as f64);

    let mut e = Breakdown::default();
    let inst = c("inst.int")? * p.inst_int_pj + c("inst.fp")? * p.inst_fp_pj + c("inst.branch")? * p.inst_branch_pj
        + c("inst.mem")? * p.inst_mem_pj;
    e.push("pu.instructions", inst * s_pu * PJ);
    e.push(
        "sram.access",
        (c("sram.read_bits")? * sram.read_pj_bit + c("sram.write_bits")? * sram.write_pj_bit) * PJ,
    );
    e.push(
        "sram.queues",
        (c("queue.read_bits")? * sram.read_pj_bit + c("queue.write_bits")? * sram.write_pj_bit) * PJ,
    );
    if cfg.spm_mode.is_cache() {
        e.push("sram.tags", c("tag.reads")? * p.tag_read_cmp_pj * PJ);
    }
    e.push("noc.routers", c("hops.noc")? * width * p.router_pj_bit * s_noc * PJ);
    e.push("noc.wires", c("wire.flit_um")? / 1000.0 * width * p.noc_wire_pj_bit_mm * s_noc * PJ);
    e.push("link.d2d", c("hops.chiplet")? * width * p.d2d_pj_bit * PJ);
    e.push("link.offpkg", (c("hops.package")? + c("hops.node")?) * width * p.offpkg_pj_bit * PJ);
    if let Some(d) = &cfg.dram {
        let bits = c("dram.read_bits")? + c("dram.write_bits")?;
        e.push("dram.access", bits * p.dram_rw_pj_bit * PJ);
        let link = match d.integration {
            DramIntegration::Interposer2_5d => p.d2d_pj_bit,
            DramIntegration::Stacked3d => p.stacked_pj_bit,
        };
        e.push("dram.link", bits * link * PJ);
        let cap_bits = d.capacity_gb * 8e9 * cfg.chiplet_count() as f64;
        e.push("dram.refresh", cap_bits * p.refresh_pj_bit * (runtime_s / (p.refresh_period_ms * 1e-3)) * PJ);
    }
    let leak_w = sram.leakage_mw * 1e-3 * cfg.tile_count() as f64;
    e.push("sram.leakage", leak_w * runtime_s);
    let total = e.total();
    let avg_power_w = if runtime_s > 0.0 { total / runtime_s } else { 0.0 };
    Ok(EnergyReport {
        items: e,
        runtime_s,
        avg_power_w,
        power_density_w_mm2: avg_power_w / area.silicon_mm2,
    })
}

/// Murphy's yield model.
pub fn murphy_yield(area_mm2: f64, defect_density: f64) -> f64 {
    let da = area_mm2 * defect_density;
    if da < 1e-12 {
        return 1.0;
    }
    let y = (1.0 - (-da).exp()) / da;
    y * y
}

/// Dies of `w`×`h` mm placed on a grid of pitch `w+scribe`, `h+scribe` that
/// lie fully inside the usable disc. The grid is either aligned to the wafer
/// centre or offset by half a die along each axis; the best of the four is
/// returned.
pub fn dies_per_wafer(w: f64, h: f64, diameter: f64, scribe: f64, edge_loss: f64) -> u64 {
    let r = diameter / 2.0 - edge_loss;
    if w <= 0.0 || h <= 0.0 || r <= 0.0 || w * w + h * h > 4.0 * r * r + 1e-9 {
        return 0;
    }
    let (pw, ph) = (w + scribe, h + scribe);
    let mut best = 0;
    for oy in [0.0, -h / 2.0] {
        for ox in [0.0, -w / 2.0] {
            let mut count = 0u64;
            let rows = (r / ph).ceil() as i64 + 1;
            for j in -rows..=rows {
                let y0 = oy + j as f64 * ph;
                let y1 = y0 + h;
                let ymax = y0.abs().max(y1.abs());
                if ymax > r + 1e-9 {
                    continue;
                }
                let half = (r * r - ymax * ymax).max(0.0).sqrt() + 1e-9;
                // Dies with ox + i*pw >= -half and ox + i*pw + w <= half.
                let lo = ((-half - ox) / pw).ceil() as i64;
                let hi = ((half - w - ox) / pw).floor() as i64;
                if hi >= lo {
                    count += (hi - lo + 1) as u64;
                }
            }
            best = best.max(count);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub die_area_mm2: f64,
    pub dies_per_wafer: u64,
    pub yield_frac: f64,
    pub die_cost_usd: f64,
    /// USD per package.
    pub package: Breakdown,
    pub system_usd: f64,
}

pub fn compute_cost(cfg: &MachineConfig, p: &ModelParams, area: &AreaReport) -> CostReport {
    let die = area.chiplet.total();
    let side = die.sqrt();
    let dpw = dies_per_wafer(side, side, p.wafer_diameter_mm, p.scribe_mm, p.edge_loss_mm);
    let y = murphy_yield(die, p.defect_density_mm2);
    let die_cost = if dpw == 0 { f64::INFINITY } else { p.wafer_cost_usd / (dpw as f64 * y) };
    let per_pkg = (cfg.chiplets_x * cfg.chiplets_y) as f64;
    let usable_r = p.wafer_diameter_mm / 2.0 - p.edge_loss_mm;
    let wafer_usd_per_mm2 = p.wafer_cost_usd / (std::f64::consts::PI * usable_r * usable_r);

    let mut pkg = Breakdown::default();
    let dies = per_pkg * die_cost;
    pkg.push("compute_dies", dies);
    let mut assembled = dies;
    if let Some(d) = &cfg.dram {
        if d.integration == DramIntegration::Interposer2_5d {
            let ip = per_pkg * p.interposer_frac * die_cost;
            pkg.push("interposer", ip);
            assembled += ip;
        }
    }
    let substrate = p.substrate_frac * wafer_usd_per_mm2 * area.package.total();
    pkg.push("substrate", substrate);
    assembled += substrate;
    pkg.push("bonding", p.bonding_frac * assembled);
    if let Some(d) = &cfg.dram {
        pkg.push("hbm", per_pkg * d.capacity_gb * p.hbm_usd_per_gb);
    }
    CostReport {
        die_area_mm2: die,
        dies_per_wafer: dpw,
        yield_frac: y,
        die_cost_usd: die_cost,
        system_usd: cfg.package_count() as f64 * pkg.total(),
        package: pkg,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reports {
    pub noc_cycles: u64,
    pub pu_cycles: u64,
    pub area: AreaReport,
    pub energy: EnergyReport,
    pub cost: CostReport,
}

pub fn compute_reports(cs: &CounterSet, cfg: &Config) -> Result<Reports, CostError> {
    let area = compute_area(&cfg.machine, &cfg.params)?;
    let energy = compute_energy(cs, &cfg.machine, &cfg.params, &area)?;
    let cost = compute_cost(&cfg.machine, &cfg.params, &area);
    Ok(Reports { noc_cycles: cs.noc_cycles, pu_cycles: cs.pu_cycles, area, energy, cost })
}

impl Reports {
    /// Machine-readable `key = value` block.
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = Vec::new();
        let mut put = |k: String, v: String| kv.push((k, v));
        put("runtime.noc_cycles".into(), self.noc_cycles.to_string());
        put("runtime.pu_cycles".into(), self.pu_cycles.to_string());
        put("runtime.seconds".into(), fmt_f64(self.energy.runtime_s));
        for (k, v) in &self.energy.items.items {
            put(format!("energy.{k}_j"), fmt_f64(*v));
        }
        put("energy.total_j".into(), fmt_f64(self.energy.items.total()));
        put("power.avg_w".into(), fmt_f64(self.energy.avg_power_w));
        put("power.density_w_mm2".into(), fmt_f64(self.energy.power_density_w_mm2));
        put("area.tile_mm2".into(), fmt_f64(self.area.tile_mm2));
        for (k, v) in &self.area.chiplet.items {
            put(format!("area.chiplet.{k}_mm2"), fmt_f64(*v));
        }
        put("area.chiplet.total_mm2".into(), fmt_f64(self.area.chiplet.total()));
        for (k, v) in &self.area.package.items {
            put(format!("area.package.{k}_mm2"), fmt_f64(*v));
        }
        put("area.package.total_mm2".into(), fmt_f64(self.area.package.total()));
        put("area.system_mm2".into(), fmt_f64(self.area.system_mm2));
        put("cost.dies_per_wafer".into(), self.cost.dies_per_wafer.to_string());
        put("cost.yield".into(), fmt_f64(self.cost.yield_frac));
        put("cost.die_usd".into(), fmt_f64(self.cost.die_cost_usd));
        for (k, v) in &self.cost.package.items {
            put(format!("cost.package.{k}_usd"), fmt_f64(*v));
        }
        put("cost.package.total_usd".into(), fmt_f64(self.cost.package.total()));
        put("cost.system_usd".into(), fmt_f64(self.cost.system_usd));
        kv
    }

    /// Human-readable tables followed by the key-value block.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let table = |s: &mut String, title: &str, unit: &str, b: &Breakdown| {
            writeln!(s, "{title} ({unit})").unwrap();
            for (k, v) in &b.items {
                writeln!(s, "  {k:<18} {v:>14.6e}").unwrap();
            }
            writeln!(s, "  {:<18} {:>14.6e}", "total", b.total()).unwrap();
        };
        writeln!(s, "runtime: {} NoC cycles, {} PU cycles, {:.6e} s", self.noc_cycles, self.pu_cycles, self.energy.runtime_s).unwrap();
        table(&mut s, "energy", "J", &self.energy.items);
        writeln!(s, "average power {:.6e} W, power density {:.6e} W/mm2", self.energy.avg_power_w, self.energy.power_density_w_mm2).unwrap();
        table(&mut s, "chiplet area", "mm2", &self.area.chiplet);
        table(&mut s, "package area", "mm2", &self.area.package);
        writeln!(
            s,
            "die {:.3} mm2, {} dies/wafer, yield {:.4}, {:.2} USD/die",
            self.cost.die_area_mm2, self.cost.dies_per_wafer, self.cost.yield_frac, self.cost.die_cost_usd
        )
        .unwrap();
        table(&mut s, "package cost", "USD", &self.cost.package);
        writeln!(s, "system cost {:.2} USD", self.cost.system_usd).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "[report]").unwrap();
        for (k, v) in self.key_values() {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }
}

/// Recompute reports for a finished run. The counters must come from a run
/// of `config_text`; overrides are applied on top of it.
pub fn postprocess(cs: &CounterSet, config_text: &str, overrides: &[(String, String)]) -> Result<Reports, CostError> {
    let base = parse_with_overrides(config_text, &[])?;
    let sum = base.checksum();
    if sum != cs.checksum {
        return Err(CostError::ChecksumMismatch { config: sum, counters: cs.checksum.clone() });
    }
    let cfg = parse_with_overrides(config_text, overrides)?;
    compute_reports(cs, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn p() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn voltage_examples() {
        assert_relative_eq!(voltage(1.0, 7.0, &p()), 0.61, epsilon = 1e-12);
        assert_relative_eq!(voltage(2.0, 7.0, &p()), 0.74, epsilon = 1e-12);
        assert_relative_eq!(voltage(0.0, 7.0, &p()), 0.48, epsilon = 1e-12);
        assert_relative_eq!(voltage_scale(2.0, 7.0, &p()), (0.74f64 / 0.61).powi(2), epsilon = 1e-12);
    }

    #[test]
    fn murphy_examples() {
        assert_eq!(murphy_yield(10.0, 0.0), 1.0);
        let oracle = |da: f64| ((1.0 - (-da).exp()) / da).powi(2);
        assert_relative_eq!(murphy_yield(10.0, 0.07), oracle(0.7), epsilon = 1e-15);
        assert!((murphy_yield(10.0, 0.07) - 0.5172).abs() < 1e-4);
        assert!((murphy_yield(100.0, 0.07) - 0.0204).abs() < 1e-4);
    }

    /// Enumerate every grid cell near the disc and test its four corners.
    fn dpw_oracle(w: f64, h: f64, diam: f64, scribe: f64, edge: f64) -> u64 {
        let r = diam / 2.0 - edge;
        let inside = |x: f64, y: f64| x * x + y * y <= r * r + 1e-6;
        let mut best = 0;
        for oy in [0.0, -h / 2.0] {
            for ox in [0.0, -w / 2.0] {
                let n = (2.0 * r / (w + scribe)) as i64 + 3;
                let m = (2.0 * r / (h + scribe)) as i64 + 3;
                let mut c = 0;
                for i in -n..=n {
                    for j in -m..=m {
                        let x0 = ox + i as f64 * (w + scribe);
                        let y0 = oy + j as f64 * (h + scribe);
                        if inside(x0, y0) && inside(x0 + w, y0) && inside(x0, y0 + h) && inside(x0 + w, y0 + h) {
                            c += 1;
                        }
                    }
                }
                best = best.max(c);
            }
        }
        best
    }

    #[test]
    fn dies_per_wafer_examples() {
        let r: f64 = 146.0;
        let sq = r * std::f64::consts::SQRT_2;
        assert_eq!(dies_per_wafer(sq, sq, 300.0, 0.2, 4.0), 1);
        assert_eq!(dies_per_wafer(400.0, 400.0, 300.0, 0.2, 4.0), 0);
        assert_eq!(dies_per_wafer(10.0, 10.0, 300.0, 0.2, 4.0), dpw_oracle(10.0, 10.0, 300.0, 0.2, 4.0));
        let n = dies_per_wafer(10.0, 10.0, 300.0, 0.2, 4.0);
        assert!(n > 550 && n < 660, "{n}");
    }

    #[test]
    fn sram_area_example() {
        assert_relative_eq!(sram_area_mm2(1024, &p()), 1.0 / 3.5, epsilon = 1e-15);
        assert!((sram_area_mm2(1024, &p()) - 0.2857).abs() < 1e-4);
    }

    #[test]
    fn pu_area_scales_with_target_frequency() {
        let cfg = MachineConfig::default();
        let fast = MachineConfig { freq_target_pu: 2.0, ..Default::default() };
        let a = compute_area(&cfg, &p()).unwrap();
        let b = compute_area(&fast, &p()).unwrap();
        assert_relative_eq!(b.chiplet.get("pu").unwrap(), 1.5 * a.chiplet.get("pu").unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn beachfront_violation_is_reported() {
        let cfg = MachineConfig {
            tiles_x: 2,
            tiles_y: 2,
            chiplets_x: 2,
            noc_width_bits: 4096,
            num_physical_nocs: 3,
            ..Default::default()
        };
        let e = compute_area(&cfg, &p()).unwrap_err();
        assert!(matches!(e, CostError::Beachfront { ref edge, .. } if edge == "east/west"), "{e}");
    }

    fn empty_counters(cfg: &MachineConfig) -> CounterSet {
        let mut cs = CounterSet { checksum: cfg.checksum(), grid: cfg.global_grid(), noc_cycles: 1000, pu_cycles: 1000, ..Default::default() };
        for k in ENERGY_COUNTERS {
            cs.set(*k, 0);
        }
        cs
    }

    const ENERGY_COUNTERS: &[&str] = &[
        "inst.int", "inst.fp", "inst.branch", "inst.mem", "sram.read_bits", "sram.write_bits", "queue.read_bits",
        "queue.write_bits", "tag.reads", "hops.noc", "wire.flit_um", "hops.chiplet", "hops.package", "hops.node",
        "dram.read_bits", "dram.write_bits",
    ];

    #[test]
    fn energy_examples() {
        let cfg = MachineConfig::default();
        let area = compute_area(&cfg, &p()).unwrap();
        let mut cs = empty_counters(&cfg);
        let e = compute_energy(&cs, &cfg, &p(), &area).unwrap();
        let nonzero: Vec<_> = e.items.items.iter().filter(|(_, v)| *v != 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(nonzero[0].0, "sram.leakage");

        cs.set("sram.read_bits", 512);
        let e = compute_energy(&cs, &cfg, &p(), &area).unwrap();
        assert_relative_eq!(e.items.get("sram.access").unwrap(), 92.16e-12, epsilon = 1e-24);

        let mut cs = empty_counters(&cfg);
        cs.set("hops.chiplet", 1);
        let e = compute_energy(&cs, &cfg, &p(), &area).unwrap();
        assert_relative_eq!(e.items.get("link.d2d").unwrap(), 35.2e-12, epsilon = 1e-24);
    }

    #[test]
    fn missing_counter_is_an_error() {
        let cfg = MachineConfig::default();
        let area = compute_area(&cfg, &p()).unwrap();
        let mut cs = empty_counters(&cfg);
        cs.counters.remove("hops.noc");
        assert!(matches!(compute_energy(&cs, &cfg, &p(), &area), Err(CostError::MissingCounter(_))));
    }

    #[test]
    fn cost_examples() {
        let mut q = p();
        q.defect_density_mm2 = 0.0;
        let cfg = MachineConfig::default();
        let area = compute_area(&cfg, &q).unwrap();
        let c = compute_cost(&cfg, &q, &area);
        assert_relative_eq!(c.die_cost_usd, 6047.0 / c.dies_per_wafer as f64, epsilon = 1e-9);
        assert!(c.package.get("hbm").is_none());
        assert!(c.package.get("interposer").is_none());
        let names: Vec<_> = c.package.items.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(names, ["compute_dies", "substrate", "bonding"]);

        let dram = MachineConfig {
            tiles_x: 16,
            tiles_y: 16,
            dram: Some(crate::archmodel::DramConfig { capacity_gb: 16.0, ..Default::default() }),
            ..Default::default()
        };
        let area = compute_area(&dram, &q).unwrap();
        let c = compute_cost(&dram, &q, &area);
        assert_relative_eq!(c.package.get("hbm").unwrap(), 120.0, epsilon = 1e-12);
        assert_relative_eq!(c.package.get("interposer").unwrap(), 0.2 * c.die_cost_usd, epsilon = 1e-9);
    }

    #[test]
    fn counters_round_trip() {
        let cfg = MachineConfig::default();
        let mut cs = empty_counters(&cfg);
        cs.set("mem.dram_reqs.3", 17);
        let back = CounterSet::parse(&cs.render()).unwrap();
        assert_eq!(back, cs);
        assert!(CounterSet::parse("hops.noc = 1\n").is_err());
        assert!(CounterSet::parse(&cs.render().replace("= 17", "= -1")).is_err());
    }

    proptest! {
        #[test]
        fn murphy_is_decreasing_in_area(a in 0.01f64..500.0, d in 0.001f64..0.2, k in 1.01f64..3.0) {
            let y = murphy_yield(a, d);
            prop_assert!(y > 0.0 && y <= 1.0);
            prop_assert!(murphy_yield(a * k, d) < y);
        }

        #[test]
        fn energy_is_linear_in_router_energy(hops in 1u64..1_000_000, scale in 1.0f64..4.0) {
            let cfg = MachineConfig::default();
            let area = compute_area(&cfg, &p()).unwrap();
            let mut cs = empty_counters(&cfg);
            cs.set("hops.noc", hops);
            let base = compute_energy(&cs, &cfg, &p(), &area).unwrap();
            let mut q = p();
            q.router_pj_bit *= scale;
            let scaled = compute_energy(&cs, &cfg, &q, &area).unwrap();
            let a = base.items.get("noc.routers").unwrap();
            let b = scaled.items.get("noc.routers").unwrap();
            prop_assert!((b - scale * a).abs() <= 1e-12 * b.abs());
            for (k, v) in &base.items.items {
                if k != "noc.routers" {
                    prop_assert_eq!(Some(*v), scaled.items.get(k));
                }
            }
        }

        #[test]
        fn dies_per_wafer_matches_enumeration(w in 2.0f64..60.0, h in 2.0f64..60.0) {
            prop_assert_eq!(dies_per_wafer(w, h, 300.0, 0.2, 4.0), dpw_oracle(w, h, 300.0, 0.2, 4.0));
        }

        #[test]
        fn cost_without_hbm_ignores_hbm_price(price in 0.1f64..100.0) {
            let cfg = MachineConfig { tiles_x: 16, tiles_y: 16, dram: Some(Default::default()), ..Default::default() };
            let mut q = p();
            let area = compute_area(&cfg, &q).unwrap();
            let a = compute_cost(&cfg, &q, &area);
            q.hbm_usd_per_gb = price;
            let b = compute_cost(&cfg, &q, &area);
            let rest = |c: &CostReport| c.package.items.iter().filter(|(k, _)| k != "hbm").map(|(_, v)| *v).collect::<Vec<_>>();
            prop_assert_eq!(rest(&a), rest(&b));
        }
    }
}
