//! Flit-level router model.
//!
//! Each router has up to nine ports. Every input port holds one FIFO per
//! logical channel; upstream routers track free slots with credits. A message
//! is routable once its timestamp is at or below the router cycle, moves at
//! most one hop per grant, and keeps its output link busy for one cycle per
//! flit.

use std::collections::VecDeque;

use smallvec::SmallVec;

use crate::archmodel::{Arbitration, AxisGraph, AxisStep, Level, MachineConfig, ModelParams, TileCoord};

pub const N: usize = 0;
pub const S: usize = 1;
pub const E: usize = 2;
pub const W: usize = 3;
pub const PU: usize = 4;
pub const XN: usize = 5;
pub const XS: usize = 6;
pub const XE: usize = 7;
pub const XW: usize = 8;
pub const MAX_PORTS: usize = 9;
pub const NO_TILE: u32 = u32::MAX;

pub const PORT_NAMES: [&str; MAX_PORTS] = ["N", "S", "E", "W", "PU", "XN", "XS", "XE", "XW"];

pub fn opposite(p: usize) -> usize {
    match p {
        N => S,
        S => N,
        E => W,
        W => E,
        XN => XS,
        XS => XN,
        XE => XW,
        XW => XE,
        _ => PU,
    }
}

fn x_port(step: AxisStep) -> usize {
    match step {
        AxisStep::Plus => E,
        AxisStep::Minus => W,
        AxisStep::ExpressPlus => XE,
        AxisStep::ExpressMinus => XW,
    }
}

fn y_port(step: AxisStep) -> usize {
    match step {
        AxisStep::Plus => S,
        AxisStep::Minus => N,
        AxisStep::ExpressPlus => XS,
        AxisStep::ExpressMinus => XN,
    }
}

fn is_x(p: usize) -> bool {
    matches!(p, E | W | XE | XW)
}

fn is_y(p: usize) -> bool {
    matches!(p, N | S | XN | XS)
}

pub type Payload = SmallVec<[u64; 4]>;

/// Merge `src` into `dst`. Must be associative and commutative.
pub type CombineFn = fn(&mut Payload, &Payload);

#[derive(Debug, PartialEq)]
pub struct Msg {
    pub payload: Payload,
    /// NoC cycle from which the message may be routed.
    pub ts: u64,
    pub dest: TileCoord,
    pub channel: u16,
    /// Flits occupied on a link: header plus payload words.
    pub words: u16,
    /// Original messages folded into this one by combining.
    pub count: u16,
    pub hops: u16,
    /// Output port at the current router, fixed on arrival.
    pub out: u8,
}

impl Clone for Msg {
    fn clone(&self) -> Self {
        Msg { payload: Payload::from_slice(&self.payload), ..*self }
    }
}

impl Msg {
    pub fn key(&self) -> Option<u64> {
        self.payload.first().copied()
    }
}

/// Flits needed for a payload of `payload_bits`, plus the header flit.
pub fn message_words(payload_bits: u32, noc_width_bits: u32, header: bool) -> u16 {
    let body = payload_bits.div_ceil(noc_width_bits);
    (body + header as u32).max(1) as u16
}

/// Dimension-ordered output port: X is resolved fully before Y.
pub fn dor_output_port(cur: TileCoord, dest: TileCoord, ax: &AxisGraph, ay: &AxisGraph) -> usize {
    if let Some(step) = ax.next_step(cur.x, dest.x) {
        x_port(step)
    } else if let Some(step) = ay.next_step(cur.y, dest.y) {
        y_port(step)
    } else {
        PU
    }
}

/// Grant one of the requesting ports (bit i set = port i requests).
pub fn arbitrate(requests: u16, ptr: &mut u8, nports: usize, policy: Arbitration) -> Option<usize> {
    if requests == 0 {
        return None;
    }
    let granted = match policy {
        Arbitration::StaticPriority => requests.trailing_zeros() as usize,
        Arbitration::RoundRobin => {
            let requests = requests & ((1u32 << nports) - 1) as u16;
            let upper = requests & !((1u32 << *ptr) - 1) as u16;
            if upper != 0 {
                upper.trailing_zeros() as usize
            } else {
                std::num::NonZeroU16::new(requests)?.trailing_zeros() as usize
            }
        }
    };
    *ptr = ((granted + 1) % nports) as u8;
    Some(granted)
}

/// Static per-tile link properties.
#[derive(Debug, Clone)]
pub struct TileGeom {
    pub coord: TileCoord,
    /// Storage index of the neighbour on each port.
    pub nbr: [u32; MAX_PORTS],
    /// Router plus link latency in NoC cycles.
    pub lat: [u16; MAX_PORTS],
    pub level: [Level; MAX_PORTS],
    /// Cycles per flit on the link (narrow or multiplexed links are > 1).
    pub ser: [u16; MAX_PORTS],
    /// On-die wire length of the link in micrometres; zero for off-die links.
    pub wire_um: [u32; MAX_PORTS],
}

/// Link latency in cycles at `f_noc` GHz: router traversal plus wire, or the
/// die-to-die / I/O-die latency when a boundary is crossed.
pub fn hop_latency_cycles(level: Level, wire_mm: f64, p: &ModelParams, f_noc: f64) -> u16 {
    let link_ps = match level {
        Level::Noc => wire_mm * p.noc_wire_ps_mm,
        Level::Chiplet => p.d2d_latency_ns * 1000.0,
        Level::Package | Level::Node => p.io_die_latency_ns * 1000.0,
    };
    let cycles = ((p.router_latency_ps + link_ps) * f_noc / 1000.0 - 1e-9).ceil();
    cycles.max(1.0) as u16
}

/// Build per-tile link tables. `store` maps a coordinate to its storage index.
pub fn build_geometry(
    cfg: &MachineConfig,
    p: &ModelParams,
    tile_side_mm: f64,
    store: impl Fn(TileCoord) -> u32,
) -> Vec<TileGeom> {
    let (w, h) = cfg.global_grid();
    let (ax, ay) = cfg.axis_graphs();
    let mut out = Vec::with_capacity((w * h) as usize);
    let node_mux = cfg.inter_node_mux_factor.max(1) as u16;
    let narrow = match cfg.inter_chiplet_link_width_bits {
        0 => 1,
        lw => cfg.noc_width_bits.div_ceil(lw).max(1) as u16,
    };
    for idx in 0..cfg.tile_count() {
        let c = cfg.coord_of(idx);
        let mut g = TileGeom {
            coord: c,
            nbr: [NO_TILE; MAX_PORTS],
            lat: [0; MAX_PORTS],
            level: [Level::Noc; MAX_PORTS],
            ser: [1; MAX_PORTS],
            wire_um: [0; MAX_PORTS],
        };
        for port in 0..MAX_PORTS {
            if port == PU {
                continue;
            }
            let (graph, step, along_x) = match port {
                E => (&ax, AxisStep::Plus, true),
                W => (&ax, AxisStep::Minus, true),
                XE => (&ax, AxisStep::ExpressPlus, true),
                XW => (&ax, AxisStep::ExpressMinus, true),
                S => (&ay, AxisStep::Plus, false),
                N => (&ay, AxisStep::Minus, false),
                XS => (&ay, AxisStep::ExpressPlus, false),
                _ => (&ay, AxisStep::ExpressMinus, false),
            };
            let from = if along_x { c.x } else { c.y };
            let Some(to) = graph.neighbor(from, step) else { continue };
            let nc = if along_x { TileCoord::new(to, c.y) } else { TileCoord::new(c.x, to) };
            let level = if along_x { cfg.boundary_level_x(from, to) } else { cfg.boundary_level_y(from, to) };
            let span = match step {
                AxisStep::ExpressPlus | AxisStep::ExpressMinus => cfg.ruche_stride as f64,
                _ if graph.is_ring() => 2.0,
                _ => 1.0,
            };
            let wire_mm = span * tile_side_mm;
            g.nbr[port] = store(nc);
            g.level[port] = level;
            g.lat[port] = hop_latency_cycles(level, wire_mm, p, cfg.freq_op_noc);
            g.ser[port] = match level {
                Level::Noc => 1,
                Level::Chiplet | Level::Package => narrow,
                Level::Node => narrow * node_mux,
            };
            g.wire_um[port] = if level == Level::Noc { (wire_mm * 1000.0).round() as u32 } else { 0 };
        }
        out.push(g);
    }
    out
}

/// Shared, read-only routing parameters.
pub struct NocParams<'a> {
    pub ax: &'a AxisGraph,
    pub ay: &'a AxisGraph,
    pub nports: usize,
    pub channels: usize,
    pub slots: u16,
    pub nocs: usize,
    pub arbitration: Arbitration,
    pub reduction_degree: u16,
    pub combine: &'a [Option<CombineFn>],
}

impl NocParams<'_> {
    pub fn noc_of(&self, channel: u16) -> usize {
        channel as usize % self.nocs
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NocCounters {
    /// Flit-hops by the level of the link traversed.
    pub flit_hops: [u64; 4],
    pub msg_hops: u64,
    pub wire_flit_um: u64,
    pub stall_backpressure: u64,
    pub stall_contention: u64,
    pub injected: Vec<u64>,
    pub ejected: Vec<u64>,
    pub merged: Vec<u64>,
}

impl NocCounters {
    pub fn new(channels: usize) -> Self {
        NocCounters {
            injected: vec![0; channels],
            ejected: vec![0; channels],
            merged: vec![0; channels],
            ..Default::default()
        }
    }

    pub fn add(&mut self, o: &NocCounters) {
        for i in 0..4 {
            self.flit_hops[i] += o.flit_hops[i];
        }
        self.msg_hops += o.msg_hops;
        self.wire_flit_um += o.wire_flit_um;
        self.stall_backpressure += o.stall_backpressure;
        self.stall_contention += o.stall_contention;
        for (a, b) in self.injected.iter_mut().zip(&o.injected) {
            *a += b;
        }
        for (a, b) in self.ejected.iter_mut().zip(&o.ejected) {
            *a += b;
        }
        for (a, b) in self.merged.iter_mut().zip(&o.merged) {
            *a += b;
        }
    }
}

/// Messages and credits a router hands to its neighbours this cycle.
#[derive(Debug, Clone, Default)]
pub struct Outbox {
    pub msgs: Vec<(u8, Msg)>,
    /// (input port, channel) of every slot freed this cycle.
    pub credits: Vec<(u8, u16)>,
}

impl Outbox {
    pub fn is_empty(&self) -> bool {
        self.msgs.is_empty() && self.credits.is_empty()
    }

    pub fn clear(&mut self) {
        self.msgs.clear();
        self.credits.clear();
    }
}

#[derive(Debug, Clone)]
pub struct Router {
    nch: usize,
    /// Input FIFOs indexed by `port * channels + channel`.
    inbuf: Vec<VecDeque<Msg>>,
    /// Free downstream slots indexed by `port * channels + channel`.
    credits: Vec<u16>,
    /// Per output port and physical NoC.
    busy_until: Vec<u64>,
    rr_out: Vec<u8>,
    rr_ch: Vec<u16>,
    rr_inject: u16,
    occupancy: [u16; MAX_PORTS],
    /// Credits freed outside the router step, returned next cycle.
    deferred_credits: Vec<(u8, u16)>,
}

impl Router {
    pub fn new(geom: &TileGeom, np: &NocParams) -> Self {
        let nch = np.channels;
        let mut credits = vec![0; MAX_PORTS * nch];
        for port in 0..MAX_PORTS {
            if geom.nbr[port] != NO_TILE {
                credits[port * nch..(port + 1) * nch].fill(np.slots);
            }
        }
        Router {
            nch,
            inbuf: (0..MAX_PORTS * nch).map(|_| VecDeque::new()).collect(),
            credits,
            busy_until: vec![0; MAX_PORTS * np.nocs],
            rr_out: vec![0; MAX_PORTS * np.nocs],
            rr_ch: vec![0; MAX_PORTS],
            rr_inject: 0,
            occupancy: [0; MAX_PORTS],
            deferred_credits: Vec::new(),
        }
    }

    pub fn buffered(&self) -> usize {
        self.occupancy.iter().map(|&o| o as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.iter().all(|&o| o == 0) && self.deferred_credits.is_empty()
    }

    pub fn occupancy(&self, port: usize, channel: u16) -> usize {
        self.inbuf[port * self.nch + channel as usize].len()
    }

    pub fn credits(&self, port: usize, channel: u16) -> u16 {
        self.credits[port * self.nch + channel as usize]
    }

    /// Iterate over every buffered message.
    pub fn messages(&self) -> impl Iterator<Item = &Msg> {
        self.inbuf.iter().flat_map(|q| q.iter())
    }

    /// Fold `m` into a buffered message with the same channel, destination
    /// and key. Returns the message back if no partner was found.
    fn try_combine(&mut self, m: Msg, np: &NocParams) -> Result<(), Msg> {
        let ch = m.channel as usize;
        let Some(f) = np.combine.get(ch).copied().flatten() else { return Err(m) };
        if np.reduction_degree == 0 {
            return Err(m);
        }
        let key = m.key();
        for port in 0..MAX_PORTS {
            for other in self.inbuf[port * self.nch + ch].iter_mut() {
                if other.dest == m.dest
                    && other.key() == key
                    && (other.count + m.count) as u32 <= np.reduction_degree as u32
                {
                    f(&mut other.payload, &m.payload);
                    other.count += m.count;
                    other.ts = other.ts.max(m.ts);
                    return Ok(());
                }
            }
        }
        Err(m)
    }

    /// Accept a message from a neighbour on input port `port`.
    pub fn arrive(&mut self, port: usize, mut m: Msg, geom: &TileGeom, np: &NocParams, ctr: &mut NocCounters) {
        m.out = dor_output_port(geom.coord, m.dest, np.ax, np.ay) as u8;
        let ch = m.channel;
        match self.try_combine(m, np) {
            Ok(()) => {
                ctr.merged[ch as usize] += 1;
                self.deferred_credits.push((port as u8, ch));
            }
            Err(m) => {
                self.inbuf[port * self.nch + ch as usize].push_back(m);
                self.occupancy[port] += 1;
            }
        }
    }

    /// Return credits for slots freed on our output port `port`.
    pub fn credit(&mut self, port: usize, channel: u16) {
        self.credits[port * self.nch + channel as usize] += 1;
    }

    pub fn injection_space(&self, channel: u16, slots: u16) -> bool {
        self.inbuf[PU * self.nch + channel as usize].len() < slots as usize
    }

    /// Move one message from a channel queue into the PU input port.
    /// `cqs[ch]` are the channel queues; returns the channel injected from.
    pub fn inject(
        &mut self,
        cqs: &mut [VecDeque<Msg>],
        cycle: u64,
        geom: &TileGeom,
        np: &NocParams,
        ctr: &mut NocCounters,
    ) -> Option<u16> {
        let nch = self.nch;
        for i in 0..nch {
            let ch = (self.rr_inject as usize + i) % nch;
            let ready = cqs[ch].front().is_some_and(|m| m.ts <= cycle);
            if !ready || !self.injection_space(ch as u16, np.slots) {
                continue;
            }
            let mut m = cqs[ch].pop_front().unwrap();
            m.ts = m.ts.max(cycle);
            m.out = dor_output_port(geom.coord, m.dest, np.ax, np.ay) as u8;
            ctr.injected[ch] += 1;
            if let Err(m) = self.try_combine(m, np) {
                self.inbuf[PU * nch + ch].push_back(m);
                self.occupancy[PU] += 1;
            } else {
                ctr.merged[ch] += 1;
            }
            self.rr_inject = ((ch + 1) % nch) as u16;
            return Some(ch as u16);
        }
        None
    }

    /// One router cycle: pick at most one routable head per input port and
    /// physical NoC, arbitrate per output port, and move the winners.
    /// `iq_free[ch]` is the free space of the local input queues; ejected
    /// messages are appended to `ejected`.
    pub fn route_step(
        &mut self,
        cycle: u64,
        geom: &TileGeom,
        np: &NocParams,
        iq_free: &mut [u32],
        out: &mut Outbox,
        ejected: &mut Vec<Msg>,
        ctr: &mut NocCounters,
    ) -> bool {
        if !self.deferred_credits.is_empty() {
            out.credits.extend(self.deferred_credits.drain(..));
        }
        if self.occupancy.iter().all(|&o| o == 0) {
            return false;
        }
        let nch = self.nch;
        let mut moved = false;
        for noc in 0..np.nocs {
            // (input port) -> (channel, output port)
            let mut cand: [Option<(u16, usize)>; MAX_PORTS] = [None; MAX_PORTS];
            let mut requests = [0u16; MAX_PORTS];
            let mut outputs = 0u16;
            for inp in 0..MAX_PORTS {
                if self.occupancy[inp] == 0 {
                    continue;
                }
                for i in 0..nch {
                    let ch = (self.rr_ch[inp] as usize + i) % nch;
                    if np.noc_of(ch as u16) != noc {
                        continue;
                    }
                    let Some(m) = self.inbuf[inp * nch + ch].front() else { continue };
                    if m.ts > cycle {
                        continue;
                    }
                    let o = m.out as usize;
                    let ok = if o == PU {
                        iq_free[ch] > 0
                    } else {
                        let entering_ring = (is_x(o) && np.ax.is_ring() && !is_x(inp))
                            || (is_y(o) && np.ay.is_ring() && !is_y(inp));
                        let need = if entering_ring { 2 } else { 1 };
                        self.busy_until[o * np.nocs + noc] <= cycle && self.credits[o * nch + ch] >= need
                    };
                    if ok {
                        cand[inp] = Some((ch as u16, o));
                        requests[o] |= 1 << inp;
                        outputs |= 1 << o;
                        break;
                    }
                    ctr.stall_backpressure += 1;
                }
            }
            while outputs != 0 {
                let o = outputs.trailing_zeros() as usize;
                outputs &= outputs - 1;
                let g = arbitrate(requests[o], &mut self.rr_out[o * np.nocs + noc], MAX_PORTS, np.arbitration)
                    .expect("non-empty request set");
                ctr.stall_contention += (requests[o].count_ones() - 1) as u64;
                let (ch, _) = cand[g].unwrap();
                let chu = ch as usize;
                let mut m = self.inbuf[g * nch + chu].pop_front().unwrap();
                self.occupancy[g] -= 1;
                self.rr_ch[g] = ((chu + 1) % nch) as u16;
                if g != PU {
                    out.credits.push((g as u8, ch));
                }
                moved = true;
                if o == PU {
                    iq_free[chu] -= 1;
                    ctr.ejected[chu] += 1;
                    ejected.push(m);
                    continue;
                }
                let ser = geom.ser[o] as u64;
                let words = m.words as u64;
                m.ts = cycle + geom.lat[o] as u64 + (words * ser).saturating_sub(1);
                m.hops += 1;
                self.credits[o * nch + chu] -= 1;
                self.busy_until[o * np.nocs + noc] = cycle + words * ser;
                ctr.flit_hops[0] += words;
                if geom.level[o] != Level::Noc {
                    ctr.flit_hops[geom.level[o] as usize] += words;
                }
                ctr.msg_hops += 1;
                ctr.wire_flit_um += words * geom.wire_um[o] as u64;
                out.msgs.push((o as u8, m));
            }
        }
        moved
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archmodel::{ExtraPorts, Topology};
    use proptest::prelude::*;

    fn mesh(w: u32, h: u32) -> MachineConfig {
        MachineConfig { tiles_x: w, tiles_y: h, ..Default::default() }
    }

    #[test]
    fn dor_examples() {
        let cfg = mesh(4, 4);
        let (ax, ay) = cfg.axis_graphs();
        assert_eq!(dor_output_port(TileCoord::new(0, 0), TileCoord::new(2, 1), &ax, &ay), E);
        assert_eq!(dor_output_port(TileCoord::new(2, 0), TileCoord::new(2, 1), &ax, &ay), S);
        assert_eq!(dor_output_port(TileCoord::new(2, 1), TileCoord::new(2, 1), &ax, &ay), PU);
        let torus = MachineConfig { tiles_x: 8, tiles_y: 1, noc_topology: Topology::FoldedTorus2d, ..Default::default() };
        let (ax, ay) = torus.axis_graphs();
        assert_eq!(dor_output_port(TileCoord::new(0, 0), TileCoord::new(6, 0), &ax, &ay), W);
        // Exactly half way round: positive direction.
        assert_eq!(dor_output_port(TileCoord::new(0, 0), TileCoord::new(4, 0), &ax, &ay), E);
    }

    /// Follow DOR from a to b, returning the hop count.
    fn walk(cfg: &MachineConfig, a: TileCoord, b: TileCoord) -> u64 {
        let (ax, ay) = cfg.axis_graphs();
        let (w, h) = cfg.global_grid();
        let mut cur = a;
        let mut hops = 0;
        let mut seen_y = false;
        loop {
            let p = dor_output_port(cur, b, &ax, &ay);
            if p == PU {
                return hops;
            }
            if is_y(p) {
                seen_y = true;
            } else {
                assert!(!seen_y, "X move after a Y move");
            }
            let step = match p {
                E | S => AxisStep::Plus,
                W | N => AxisStep::Minus,
                XE | XS => AxisStep::ExpressPlus,
                _ => AxisStep::ExpressMinus,
            };
            cur = if is_x(p) {
                TileCoord::new(ax.neighbor(cur.x, step).unwrap(), cur.y)
            } else {
                TileCoord::new(cur.x, ay.neighbor(cur.y, step).unwrap())
            };
            assert!(cur.x < w && cur.y < h);
            hops += 1;
            assert!(hops <= (w + h) as u64);
        }
    }

    /// All-pairs BFS over the physical router graph.
    fn apsp(cfg: &MachineConfig) -> Vec<Vec<u64>> {
        let adj = crate::archmodel::router_graph(cfg);
        let n = adj.len();
        (0..n)
            .map(|s| {
                let mut d = vec![u64::MAX; n];
                d[s] = 0;
                let mut q = VecDeque::from([s]);
                while let Some(u) = q.pop_front() {
                    for &v in &adj[u] {
                        if d[v] == u64::MAX {
                            d[v] = d[u] + 1;
                            q.push_back(v);
                        }
                    }
                }
                d
            })
            .collect()
    }

    #[test]
    fn dor_paths_are_shortest_on_mesh_and_torus() {
        for topo in [Topology::Mesh2d, Topology::FoldedTorus2d] {
            for (w, h) in [(8, 8), (5, 3), (1, 6), (8, 2)] {
                let cfg = MachineConfig { tiles_x: w, tiles_y: h, noc_topology: topo, ..Default::default() };
                let d = apsp(&cfg);
                for a in 0..cfg.tile_count() {
                    for b in 0..cfg.tile_count() {
                        let hops = walk(&cfg, cfg.coord_of(a), cfg.coord_of(b));
                        assert_eq!(hops, d[a as usize][b as usize], "{topo:?} {w}x{h} {a}->{b}");
                    }
                }
            }
        }
    }

    #[test]
    fn dor_with_ruche_is_shortest() {
        let cfg = MachineConfig { tiles_x: 8, tiles_y: 8, extra_ports: ExtraPorts::Ruche, ruche_stride: 3, ..Default::default() };
        let d = apsp(&cfg);
        for a in 0..64 {
            for b in 0..64 {
                assert_eq!(walk(&cfg, cfg.coord_of(a), cfg.coord_of(b)), d[a as usize][b as usize]);
            }
        }
    }

    #[test]
    fn arbitration_examples() {
        let mut ptr = 3;
        assert_eq!(arbitrate(1 << N, &mut ptr, 5, Arbitration::RoundRobin), Some(N));
        let mut ptr = S as u8;
        assert_eq!(arbitrate((1 << N) | (1 << S), &mut ptr, 5, Arbitration::RoundRobin), Some(S));
        assert_eq!(ptr as usize, S + 1);
        let mut ptr = 2;
        assert_eq!(arbitrate(0b11010, &mut ptr, 5, Arbitration::StaticPriority), Some(1));
        assert_eq!(arbitrate(0, &mut ptr, 5, Arbitration::RoundRobin), None);
    }

    #[test]
    fn round_robin_fairness() {
        let mut ptr = 0;
        let mut grants = [0u32; MAX_PORTS];
        let req = (1 << N) | (1 << S) | (1 << W) | (1 << PU);
        for _ in 0..100 {
            grants[arbitrate(req, &mut ptr, 5, Arbitration::RoundRobin).unwrap()] += 1;
        }
        for p in [N, S, W, PU] {
            assert!((24..=26).contains(&grants[p]), "{grants:?}");
        }
    }

    #[test]
    fn word_accounting() {
        assert_eq!(message_words(128, 64, true), 3);
        assert_eq!(message_words(128, 64, false), 2);
        assert_eq!(message_words(1, 64, true), 2);
        assert_eq!(message_words(0, 64, false), 1);
    }

    #[test]
    fn default_hop_is_one_cycle() {
        let p = ModelParams::default();
        assert_eq!(hop_latency_cycles(Level::Noc, 0.33, &p, 1.0), 1);
        assert_eq!(hop_latency_cycles(Level::Chiplet, 0.33, &p, 1.0), 5);
        assert_eq!(hop_latency_cycles(Level::Package, 0.33, &p, 1.0), 21);
        assert_eq!(hop_latency_cycles(Level::Noc, 0.33, &p, 2.0), 2);
    }

    /// A tiny lock-step network used to exercise the router in isolation.
    struct Net {
        cfg: MachineConfig,
        geom: Vec<TileGeom>,
        routers: Vec<Router>,
        outs: Vec<Outbox>,
        cqs: Vec<Vec<VecDeque<Msg>>>,
        delivered: Vec<Msg>,
        ctr: NocCounters,
        ax: &'static AxisGraph,
        ay: &'static AxisGraph,
        combine: &'static [Option<CombineFn>],
        degree: u16,
    }

    fn sum_combine(d: &mut Payload, s: &Payload) {
        d[1] += s[1];
    }

    impl Net {
        fn new(cfg: MachineConfig, degree: u16) -> Net {
            let p = ModelParams::default();
            let geom = build_geometry(&cfg, &p, 0.33, |c| cfg.index_of(c) as u32);
            let (ax, ay) = cfg.axis_graphs();
            let (ax, ay) = (&*Box::leak(Box::new(ax)), &*Box::leak(Box::new(ay)));
            let combine: &'static [Option<CombineFn>] = Box::leak(vec![Some(sum_combine as CombineFn), None].into_boxed_slice());
            let mut net = Net {
                routers: vec![],
                outs: vec![Outbox::default(); geom.len()],
                cqs: vec![vec![VecDeque::new(), VecDeque::new()]; geom.len()],
                delivered: vec![],
                ctr: NocCounters::new(2),
                ax,
                ay,
                combine,
                degree,
                geom,
                cfg,
            };
            let np = net.np_owned();
            net.routers = net.geom.iter().map(|g| Router::new(g, &np.as_params(&net))).collect();
            net
        }

        fn np_owned(&self) -> NpOwned {
            NpOwned { slots: self.cfg.buffer_slots_per_port as u16, nports: self.cfg.ports_per_router() }
        }

        fn send(&mut self, from: u32, to: TileCoord, ch: u16, payload: &[u64], words: u16, ts: u64) {
            self.cqs[from as usize][ch as usize].push_back(Msg {
                payload: payload.into(),
                ts,
                dest: to,
                channel: ch,
                words,
                count: 1,
                hops: 0,
                out: 0,
            });
        }

        fn cycle(&mut self, c: u64) {
            let own = self.np_owned();
            let np = own.as_params(self);
            for t in 0..self.routers.len() {
                self.outs[t].clear();
                let mut free = vec![u32::MAX; 2];
                let r = &mut self.routers[t];
                let mut ej = vec![];
                r.route_step(c, &self.geom[t], &np, &mut free, &mut self.outs[t], &mut ej, &mut self.ctr);
                r.inject(&mut self.cqs[t], c, &self.geom[t], &np, &mut self.ctr);
                self.delivered.extend(ej);
            }
            for t in 0..self.routers.len() {
                for port in 0..MAX_PORTS {
                    let n = self.geom[t].nbr[port];
                    if n == NO_TILE {
                        continue;
                    }
                    let src = &self.outs[n as usize];
                    for (op, m) in src.msgs.iter() {
                        if *op as usize == opposite(port) {
                            self.routers[t].arrive(port, m.clone(), &self.geom[t], &np, &mut self.ctr);
                        }
                    }
                    for (ip, ch) in src.credits.iter() {
                        if *ip as usize == opposite(port) {
                            self.routers[t].credit(port, *ch);
                        }
                    }
                }
            }
        }

        fn idle(&self) -> bool {
            self.routers.iter().all(|r| r.is_empty())
                && self.cqs.iter().all(|q| q.iter().all(|c| c.is_empty()))
                && self.outs.iter().all(|o| o.msgs.is_empty())
        }
    }

    struct NpOwned {
        slots: u16,
        nports: usize,
    }

    impl NpOwned {
        fn as_params(&self, net: &Net) -> NocParams<'static> {
            NocParams {
                ax: net.ax,
                ay: net.ay,
                nports: self.nports,
                channels: 2,
                slots: self.slots,
                nocs: 1,
                arbitration: Arbitration::RoundRobin,
                reduction_degree: net.degree,
                combine: net.combine,
            }
        }
    }

    #[test]
    fn single_message_timing_and_flit_hops() {
        let mut net = Net::new(mesh(4, 4), 0);
        net.send(0, TileCoord::new(3, 2), 1, &[7, 8], 3, 0);
        let mut c = 0;
        while !net.idle() {
            net.cycle(c);
            c += 1;
            assert!(c < 100);
        }
        assert_eq!(net.delivered.len(), 1);
        let m = &net.delivered[0];
        assert_eq!(m.hops, 5);
        assert_eq!(net.ctr.flit_hops[0], 3 * 5);
        // Injected at 0 and routed from cycle 1; each of the 5 hops takes 1 + 2 serialization cycles.
        assert_eq!(m.ts, 1 + 5 * 3);
    }

    #[test]
    fn future_timestamp_is_not_routed() {
        let mut net = Net::new(mesh(2, 1), 0);
        net.send(0, TileCoord::new(1, 0), 1, &[1], 1, 3);
        for c in 0..3 {
            net.cycle(c);
            assert_eq!(net.ctr.injected[1], 0);
        }
        net.cycle(3);
        assert_eq!(net.ctr.injected[1], 1);
    }

    #[test]
    fn backpressure_stalls_when_buffer_full() {
        let mut net = Net::new(mesh(3, 1), 0);
        for i in 0..20 {
            net.send(0, TileCoord::new(2, 0), 1, &[i], 1, 0);
        }
        // The destination never drains.
        let own = net.np_owned();
        for c in 0..60 {
            net.outs.iter_mut().for_each(|o| o.clear());
            let np = own.as_params(&net);
            for t in 0..3 {
                let mut free = vec![0u32; 2];
                let mut ej = vec![];
                net.routers[t].route_step(c, &net.geom[t], &np, &mut free, &mut net.outs[t], &mut ej, &mut net.ctr);
                net.routers[t].inject(&mut net.cqs[t], c, &net.geom[t], &np, &mut net.ctr);
                assert!(ej.is_empty());
            }
            for t in 0..3usize {
                for port in 0..MAX_PORTS {
                    let n = net.geom[t].nbr[port];
                    if n == NO_TILE {
                        continue;
                    }
                    let msgs: Vec<_> = net.outs[n as usize].msgs.iter().cloned().collect();
                    let creds: Vec<_> = net.outs[n as usize].credits.iter().cloned().collect();
                    for (op, m) in msgs {
                        if op as usize == opposite(port) {
                            net.routers[t].arrive(port, m, &net.geom[t], &np, &mut net.ctr);
                        }
                    }
                    for (ip, ch) in creds {
                        if ip as usize == opposite(port) {
                            net.routers[t].credit(port, ch);
                        }
                    }
                }
            }
            for r in &net.routers {
                for port in 0..MAX_PORTS {
                    assert!(r.occupancy(port, 1) <= net.cfg.buffer_slots_per_port as usize);
                }
            }
        }
        assert!(net.ctr.stall_backpressure > 0);
        let buffered: usize = net.routers.iter().map(|r| r.buffered()).sum();
        let queued: usize = net.cqs[0][1].len();
        assert_eq!(buffered + queued, 20);
    }

    #[test]
    fn reduction_sums_to_sender_count() {
        let cfg = mesh(4, 4);
        let mut net = Net::new(cfg, 4);
        let root = TileCoord::new(0, 0);
        for t in 0..16 {
            net.send(t, root, 0, &[42, 1], 2, 0);
        }
        let mut c = 0;
        while !net.idle() {
            net.cycle(c);
            c += 1;
        }
        let total: u64 = net.delivered.iter().map(|m| m.payload[1]).sum();
        assert_eq!(total, 16);
        let merged = net.ctr.merged[0];
        assert_eq!(net.delivered.len() as u64 + merged, 16);
        assert!(net.delivered.iter().all(|m| m.count <= 4));
    }

    #[test]
    fn no_combining_when_disabled() {
        let mut net = Net::new(mesh(4, 4), 0);
        for t in 0..16 {
            net.send(t, TileCoord::new(0, 0), 0, &[42, 1], 2, 0);
        }
        let mut c = 0;
        while !net.idle() {
            net.cycle(c);
            c += 1;
        }
        assert_eq!(net.delivered.len(), 16);
        assert_eq!(net.ctr.merged[0], 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn conservation_and_monotone_timestamps(
            torus in any::<bool>(),
            w in 2u32..6,
            h in 1u32..5,
            sends in proptest::collection::vec((0u32..30, 0u32..30, 0u16..2, 1u16..4, 0u64..20), 1..40),
        ) {
            let topo = if torus { Topology::FoldedTorus2d } else { Topology::Mesh2d };
            let cfg = MachineConfig { tiles_x: w, tiles_y: h, noc_topology: topo, buffer_slots_per_port: 2, ..Default::default() };
            let n = cfg.tile_count() as u32;
            let mut net = Net::new(cfg.clone(), 0);
            let mut per_src: Vec<Vec<(u64, u16)>> = vec![vec![]; n as usize];
            for (i, &(s, d, ch, words, ts)) in sends.iter().enumerate() {
                let s = s % n;
                let dest = cfg.coord_of((d % n) as u64);
                let ts = ts.max(per_src[s as usize].last().map(|x| x.0).unwrap_or(0));
                per_src[s as usize].push((ts, ch));
                net.send(s, dest, ch, &[i as u64], words, ts);
            }
            let mut c = 0;
            while !net.idle() {
                net.cycle(c);
                c += 1;
                prop_assert!(c < 5000, "network did not drain");
            }
            prop_assert_eq!(net.delivered.len(), sends.len());
            let mut ids: Vec<u64> = net.delivered.iter().map(|m| m.payload[0]).collect();
            ids.sort();
            prop_assert_eq!(ids, (0..sends.len() as u64).collect::<Vec<_>>());
            let injected: u64 = net.ctr.injected.iter().sum();
            let ejected: u64 = net.ctr.ejected.iter().sum();
            prop_assert_eq!(injected, ejected);
            for m in &net.delivered {
                let (_, _, _, _, ts0) = sends[m.payload[0] as usize];
                prop_assert!(m.ts >= ts0);
                let dist = crate::archmodel::route_distance(&cfg, cfg.coord_of((sends[m.payload[0] as usize].0 % n) as u64), m.dest);
                prop_assert_eq!(m.hops as u64, dist);
            }
        }
    }
}
