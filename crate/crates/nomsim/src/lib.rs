//! Cycle-level simulator of bulk data copy inside a 3D-stacked DRAM.
//!
//! The device under study moves cache-block payloads directly between banks
//! over a TDM circuit-switched mesh laid over the bank grid ("network on
//! memory"), with a centralized circuit-setup unit in the front-end
//! controller. The simulator compares that mechanism against a conventional
//! processor-mediated copy path and against in-DRAM copy over a shared
//! internal bus, under configurable synthetic workloads.
//!
//! Module map:
//! - [`topology`]: bank grid, vault grouping, shortest-path DAGs
//! - [`tdm`]: slot-table occupancy, circuit search/reserve/release
//! - [`fabric`]: slot tables, flit movement, shared-TSV vertical bus
//! - [`ccu`]: centralized circuit-setup unit and sideband programming
//! - [`dram`]: vault controllers, bank timing, backing store, shared bus
//! - [`engines`]: copy mechanisms and dispatch policy
//! - [`workload`]: synthetic traffic generation and trace files
//! - [`config`]: simulation parameters and the flat key-value config format
//! - [`stats`]: run statistics and report rendering
//! - [`sim`]: the cycle loop tying the pieces together

pub mod ccu;
pub mod config;
pub mod dram;
pub mod engines;
pub mod fabric;
pub mod sim;
pub mod stats;
pub mod tdm;
pub mod topology;
pub mod workload;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("trace parse error at line {line}: {msg}")]
    Trace { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
