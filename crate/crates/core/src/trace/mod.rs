//! Append-only JSON-lines traces.
//!
//! A trace file holds one self-describing JSON object per line: a `meta`
//! record first (run configuration echo), then `task` records (GUID, parent
//! GUID, annotation, worker, timer intervals) and `counter` records.
//! Timestamps are nanoseconds since run start.

pub mod reader;
pub mod record;
pub mod timeline;
pub mod writer;

pub use reader::{
    parse_trace, read_trace, validate, Trace, TraceError, ValidationReport, Violation,
};
pub use record::{CounterRecord, MetaRecord, TaskRecord, TraceRecord};
pub use timeline::{export_timeline, timeline_events};
pub use writer::{write_trace, TraceSender, TraceStats, TraceWriter};
