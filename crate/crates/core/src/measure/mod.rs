//! In-situ measurement.
//!
//! First-person: a [`Profiler`] listens to executor events and keeps one
//! timer per task (start/resume, yield, stop), aggregated into a flat
//! per-annotation profile with inclusive and exclusive times.
//!
//! Third-person: a sampler thread polls [`CounterSource`]s (OS process
//! accounting, scheduler internals) on a fixed period.

pub mod config;
pub mod profiler;
pub mod sampler;
pub mod sources;

pub use config::{MeasureConfig, TraceSetting};
pub use profiler::{
    profile_report, render_profile, sort_profile, ProfileEntry, ProfileStore, Profiler, TimerRecord,
};
pub use sampler::{
    start_sampler, CounterKind, CounterSample, CounterSource, CounterStore, FnSource,
    SamplerBuilder, SamplerError, SamplerHandle, SourceStatus,
};
pub use sources::{builtin_sources, CounterSelect};
