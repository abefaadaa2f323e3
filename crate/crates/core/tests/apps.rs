use manysim::apps::{run_app, AppKind, AppParams, Dataset};
use manysim::archmodel::{Config, MachineConfig, ModelParams, Topology};
use manysim::engine::{BarrierMode, SimOptions};

fn cfg(tiles: u32, spm_kib: u32) -> Config {
    Config {
        machine: MachineConfig { tiles_x: tiles, tiles_y: tiles, spm_kib, ..Default::default() },
        params: ModelParams::default(),
    }
}

fn check(kind: AppKind, ds: &Dataset, c: &Config, p: &AppParams) {
    let r = run_app(kind, ds, c, &SimOptions::default(), p).unwrap();
    assert!(r.check.is_ok(), "{kind} on {ds}: {:?}", r.check);
}

#[test]
fn every_app_matches_its_reference_on_the_hand_graph() {
    let c = cfg(4, 256);
    for kind in AppKind::ALL {
        check(kind, &Dataset::Hand, &c, &AppParams::default());
    }
}

#[test]
fn every_app_matches_on_rmat10_torus() {
    let mut c = cfg(8, 512);
    c.machine.noc_topology = Topology::FoldedTorus2d;
    for kind in AppKind::ALL {
        let t = std::time::Instant::now();
        check(kind, &Dataset::Rmat { scale: 10, edge_factor: 16 }, &c, &AppParams::default());
        eprintln!("{kind}: {:?}", t.elapsed());
    }
}

#[test]
fn barrier_variants_reach_the_same_fixed_point() {
    let c = cfg(4, 512);
    for barrier in [BarrierMode::None, BarrierMode::Local, BarrierMode::Global] {
        for kind in [AppKind::Bfs, AppKind::Sssp, AppKind::Wcc] {
            check(kind, &Dataset::Rmat { scale: 8, edge_factor: 8 }, &c, &AppParams { barrier, ..Default::default() });
        }
    }
}
