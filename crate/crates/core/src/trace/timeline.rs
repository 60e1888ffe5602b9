//! Export to the browser trace-event JSON format (chrome://tracing,
//! Perfetto). One lane per worker; yields become nested slices; counters
//! become counter tracks.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde_json::{json, Value};

use super::reader::Trace;

const PID: u64 = 1;

fn us(ns: u64) -> f64 {
    ns as f64 / 1_000.0
}

pub fn timeline_events(trace: &Trace) -> Vec<Value> {
    let mut events = Vec::new();
    let workers: BTreeSet<usize> = trace.tasks.iter().map(|t| t.worker).collect();
    for w in &workers {
        events.push(json!({
            "name": "thread_name",
            "ph": "M",
            "pid": PID,
            "tid": w,
            "args": { "name": format!("worker {w}") },
        }));
    }
    for t in &trace.tasks {
        events.push(json!({
            "name": t.annotation,
            "cat": "task",
            "ph": "X",
            "pid": PID,
            "tid": t.worker,
            "ts": us(t.start_ns),
            "dur": us(t.stop_ns - t.start_ns),
            "args": { "guid": t.guid, "parent_guid": t.parent_guid, "failed": t.failed },
        }));
        for &(y, r) in &t.yields {
            events.push(json!({
                "name": "yielded",
                "cat": "yield",
                "ph": "X",
                "pid": PID,
                "tid": t.worker,
                "ts": us(y),
                "dur": us(r - y),
                "args": { "guid": t.guid },
            }));
        }
    }
    for c in &trace.counters {
        events.push(json!({
            "name": c.name,
            "ph": "C",
            "pid": PID,
            "ts": us(c.timestamp_ns),
            "args": { "value": c.value },
        }));
    }
    events
}

pub fn export_timeline(trace: &Trace, path: impl AsRef<Path>) -> io::Result<()> {
    let doc = json!({
        "traceEvents": timeline_events(trace),
        "displayTimeUnit": "ns",
        "otherData": {
            "backend": trace.meta.backend,
            "workers": trace.meta.workers,
            "seed": trace.meta.seed,
        },
    });
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &doc)?;
    out.flush()
}
