//! Parallel, deterministic, flit-level simulator for tiled distributed-memory
//! manycore architectures.
//!
//! The DUT is a hierarchy of nodes, packages, chiplets and tiles flattened
//! into a global tile grid. Applications are expressed as init and
//! message-triggered tasks that run natively on the host while the network
//! and memory system are simulated cycle by cycle. Counters collected during
//! a run feed a decoupled energy, area and cost model.

pub mod apps;
pub mod archmodel;
pub mod energycost;
pub mod engine;
pub mod memory;
pub mod noc;

pub use archmodel::{parse_config, parse_config_str, Config, MachineConfig, ModelParams, TileCoord};
