//! 2D Ising Metropolis workload and its exact-enumeration oracle.
//!
//! Energy convention: E = -sum over sites of s·(right + down), so an L×L
//! periodic lattice has exactly 2L² bonds (units of J). Walkers draw from a
//! 64-bit Mersenne twister keyed by `[seed, walker_id]`.

pub mod lattice;
pub mod mt64;
pub mod oracle;
pub mod stats;
pub mod walker;
pub mod workload;

pub use lattice::Lattice;
pub use mt64::Mt64;
pub use oracle::{exact_values, ExactValues, OracleError};
pub use walker::{measure_state, MeasurementRecord, Snapshot, WalkerState};
pub use workload::{
    run_workload, CsvSink, MeasurementSink, NullSink, SinkError, VecSink, WorkloadConfig,
    WorkloadError, WorkloadResult,
};
