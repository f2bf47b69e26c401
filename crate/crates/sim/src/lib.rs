//! Multiprogrammed simulator front end: places compiled programs, drives the
//! control unit and reports timing, energy and utilization.

pub mod kernels;
pub mod machine;
pub mod report;
pub mod workload;

pub use machine::{run_instance, App, AppOutcome, InstanceOutcome, LaneSample, Mode, SimConfig};
pub use report::{mix_metrics, MixMetrics, Report, RunStats};
pub use workload::{generate_mixes, run_mix, run_shared, run_single, MixFile, MixSpec, System, VfClass};
