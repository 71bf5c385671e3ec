//! Desk-scale benchmark harness for edge-vs-cloud computation offloading.
//!
//! The crate wires together a MEC-style service registry, an offloading
//! vision server, a userspace network path emulator, a closed-loop device
//! load generator, and a statistics/report pipeline. Everything runs as
//! plain processes (or in-process handles, for tests) on one host.

pub mod app;
pub mod httpwire;
pub mod loadgen;
pub mod metrics;
pub mod path;
pub mod registry;
pub mod scenario;
pub mod vision;
pub mod workload;

use std::sync::OnceLock;
use std::time::Instant;

/// Milliseconds since the process epoch, monotonic.
///
/// Core modules take timestamps as parameters; this is the single place
/// the facades read the clock from.
pub fn now_ms() -> f64 {
    static EPOCH: OnceLock<Instant> = OnceLock::new();
    EPOCH.get_or_init(Instant::now).elapsed().as_secs_f64() * 1000.0
}
