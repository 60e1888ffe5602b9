use serde::{Deserialize, Serialize};

use crate::exec::Guid;
use crate::measure::{CounterKind, CounterSample, TimerRecord};

pub const FORMAT: &str = "taskbench-trace";
pub const VERSION: u32 = 1;

/// One line of a trace file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceRecord {
    Meta(MetaRecord),
    Task(TaskRecord),
    Counter(CounterRecord),
}

/// Run configuration echo; always the first line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaRecord {
    pub format: String,
    pub version: u32,
    pub backend: String,
    pub workers: usize,
    pub seed: u64,
    /// Free-form workload parameters.
    pub workload: serde_json::Value,
}

impl MetaRecord {
    pub fn new(
        backend: impl Into<String>,
        workers: usize,
        seed: u64,
        workload: serde_json::Value,
    ) -> Self {
        Self {
            format: FORMAT.to_owned(),
            version: VERSION,
            backend: backend.into(),
            workers,
            seed,
            workload,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub guid: Guid,
    pub parent_guid: Guid,
    pub annotation: String,
    pub worker: usize,
    pub created_ns: u64,
    pub start_ns: u64,
    pub stop_ns: u64,
    pub yields: Vec<(u64, u64)>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
}

impl From<&TimerRecord> for TaskRecord {
    fn from(t: &TimerRecord) -> Self {
        Self {
            guid: t.guid,
            parent_guid: t.parent_guid,
            annotation: t.annotation.clone(),
            worker: t.worker,
            created_ns: t.created_ns,
            start_ns: t.start_ns,
            stop_ns: t.stop_ns,
            yields: t.yields.clone(),
            failed: t.failed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterRecord {
    pub name: String,
    pub timestamp_ns: u64,
    pub value: f64,
    /// Declared kind; monotonic series are checked for decreases.
    pub monotonic: bool,
}

impl CounterRecord {
    pub fn from_sample(s: &CounterSample, kind: CounterKind) -> Self {
        Self {
            name: s.name.clone(),
            timestamp_ns: s.timestamp_ns,
            value: s.value,
            monotonic: kind == CounterKind::Monotonic,
        }
    }
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace records always serialize")
    }
}
