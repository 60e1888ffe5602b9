//! Task-parallel runtime workbench.
//!
//! Two interchangeable executor backends share one task/future/synchronization
//! API ([`exec`]): an OS-thread pool that dispatches work round-robin onto
//! per-thread queues, and a cooperative user-level task scheduler with
//! per-worker FCFS queues and work stealing. Both are instrumented by the
//! [`measure`] subsystem (event-driven task timers plus periodic counter
//! sampling), whose output is persisted by [`trace`]. The [`ising`] module
//! provides the walker/accumulator Monte Carlo workload used to compare the
//! two backends.

pub mod clock;
pub mod exec;
pub mod ising;
pub mod measure;
pub mod shapes;
pub mod trace;

pub use clock::RunClock;
pub use exec::{
    annotated, Backend, ExecHandle, ExecutionSummary, Executor, ExecutorConfig, FutureHandle,
    TaskCondvar, TaskMutex,
};
