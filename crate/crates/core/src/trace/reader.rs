//! Trace loading and validation.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::record::{CounterRecord, MetaRecord, TaskRecord, TraceRecord};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot read trace: {0}")]
    Io(#[from] io::Error),
    #[error("trace does not start with a meta record")]
    MissingMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub meta: MetaRecord,
    pub tasks: Vec<TaskRecord>,
    pub counters: Vec<CounterRecord>,
    /// Every parsed record in file order, meta first.
    pub records: Vec<TraceRecord>,
    /// Lines that could not be parsed (normally only a truncated tail).
    pub discarded_lines: usize,
    /// Extra meta records after the first line.
    pub extra_meta: usize,
}

impl Trace {
    pub fn empty(meta: MetaRecord) -> Self {
        Self {
            records: vec![TraceRecord::Meta(meta.clone())],
            meta,
            tasks: Vec::new(),
            counters: Vec::new(),
            discarded_lines: 0,
            extra_meta: 0,
        }
    }

    pub fn counter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.counters.iter().map(|c| c.name.clone()).collect();
        names.sort();
        names.dedup();
        names
    }
}

/// Parses a trace. Unparseable lines are skipped and counted; the first
/// record must be a meta record.
pub fn read_trace(path: impl AsRef<Path>) -> Result<Trace, TraceError> {
    parse_trace(BufReader::new(File::open(path)?))
}

pub fn parse_trace(input: impl BufRead) -> Result<Trace, TraceError> {
    let mut lines = input.lines();
    let meta = loop {
        match lines.next() {
            None => return Err(TraceError::MissingMeta),
            Some(line) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<TraceRecord>(&line) {
                    Ok(TraceRecord::Meta(m)) => break m,
                    _ => return Err(TraceError::MissingMeta),
                }
            }
        }
    };
    let mut trace = Trace::empty(meta);
    for line in lines {
        let line = match line {
            Ok(l) => l,
            Err(e) if e.kind() == io::ErrorKind::InvalidData => {
                trace.discarded_lines += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if line.trim().is_empty() {
            continue;
        }
        let rec = match serde_json::from_str::<TraceRecord>(&line) {
            Ok(r) => r,
            Err(_) => {
                trace.discarded_lines += 1;
                continue;
            }
        };
        match &rec {
            TraceRecord::Task(t) => trace.tasks.push(t.clone()),
            TraceRecord::Counter(c) => trace.counters.push(c.clone()),
            TraceRecord::Meta(_) => trace.extra_meta += 1,
        }
        trace.records.push(rec);
    }
    Ok(trace)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    DanglingParent {
        guid: u64,
        parent_guid: u64,
    },
    ParentCreatedLater {
        guid: u64,
        parent_guid: u64,
    },
    DuplicateGuid {
        guid: u64,
    },
    ZeroGuid,
    BadInterval {
        guid: u64,
        reason: String,
    },
    CounterTimeReversed {
        name: String,
        timestamp_ns: u64,
    },
    CounterDecreased {
        name: String,
        timestamp_ns: u64,
        from: f64,
        to: f64,
    },
    ExtraMeta {
        count: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DanglingParent { guid, parent_guid } => {
                write!(f, "task {guid}: parent {parent_guid} not in trace")
            }
            Violation::ParentCreatedLater { guid, parent_guid } => {
                write!(
                    f,
                    "task {guid}: parent {parent_guid} created after its child"
                )
            }
            Violation::DuplicateGuid { guid } => write!(f, "guid {guid} appears twice"),
            Violation::ZeroGuid => write!(f, "task record with guid 0"),
            Violation::BadInterval { guid, reason } => write!(f, "task {guid}: {reason}"),
            Violation::CounterTimeReversed { name, timestamp_ns } => {
                write!(
                    f,
                    "counter {name}: timestamp went backwards at {timestamp_ns}"
                )
            }
            Violation::CounterDecreased {
                name,
                timestamp_ns,
                from,
                to,
            } => write!(
                f,
                "monotonic counter {name} decreased from {from} to {to} at {timestamp_ns}"
            ),
            Violation::ExtraMeta { count } => {
                write!(f, "{count} meta records after the first line")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub tasks: usize,
    pub counters: usize,
    pub discarded_lines: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn lineage_violations(&self) -> usize {
        self.violations
            .iter()
            .filter(|v| {
                matches!(
                    v,
                    Violation::DanglingParent { .. } | Violation::ParentCreatedLater { .. }
                )
            })
            .count()
    }
}

/// Checks GUID lineage closure, timer interval sanity and counter
/// monotonicity.
pub fn validate(trace: &Trace) -> ValidationReport {
    let mut violations = Vec::new();
    if trace.extra_meta > 0 {
        violations.push(Violation::ExtraMeta {
            count: trace.extra_meta,
        });
    }

    let mut created: HashMap<u64, u64> = HashMap::with_capacity(trace.tasks.len());
    let mut seen = HashSet::with_capacity(trace.tasks.len());
    for t in &trace.tasks {
        if t.guid == 0 {
            violations.push(Violation::ZeroGuid);
        } else if !seen.insert(t.guid) {
            violations.push(Violation::DuplicateGuid { guid: t.guid });
        }
        created.insert(t.guid, t.created_ns);
        if let Some(reason) = interval_problem(t) {
            violations.push(Violation::BadInterval {
                guid: t.guid,
                reason,
            });
        }
    }
    for t in &trace.tasks {
        if t.parent_guid == 0 {
            continue;
        }
        match created.get(&t.parent_guid) {
            None => violations.push(Violation::DanglingParent {
                guid: t.guid,
                parent_guid: t.parent_guid,
            }),
            Some(&pc) if pc > t.created_ns => violations.push(Violation::ParentCreatedLater {
                guid: t.guid,
                parent_guid: t.parent_guid,
            }),
            Some(_) => {}
        }
    }

    let mut last: HashMap<&str, (u64, f64)> = HashMap::new();
    for c in &trace.counters {
        if let Some(&(ts, v)) = last.get(c.name.as_str()) {
            if c.timestamp_ns < ts {
                violations.push(Violation::CounterTimeReversed {
                    name: c.name.clone(),
                    timestamp_ns: c.timestamp_ns,
                });
            }
            if c.monotonic && c.value < v {
                violations.push(Violation::CounterDecreased {
                    name: c.name.clone(),
                    timestamp_ns: c.timestamp_ns,
                    from: v,
                    to: c.value,
                });
            }
        }
        last.insert(&c.name, (c.timestamp_ns, c.value));
    }

    ValidationReport {
        tasks: trace.tasks.len(),
        counters: trace.counters.len(),
        discarded_lines: trace.discarded_lines,
        violations,
    }
}

fn interval_problem(t: &TaskRecord) -> Option<String> {
    if t.created_ns > t.start_ns {
        return Some(format!(
            "started ({}) before created ({})",
            t.start_ns, t.created_ns
        ));
    }
    if t.start_ns > t.stop_ns {
        return Some(format!(
            "stopped ({}) before started ({})",
            t.stop_ns, t.start_ns
        ));
    }
    let mut cursor = t.start_ns;
    for &(y, r) in &t.yields {
        if y < cursor {
            return Some(format!(
                "yield at {y} overlaps earlier activity ending {cursor}"
            ));
        }
        if y >= r {
            return Some(format!("yield at {y} not before resume at {r}"));
        }
        cursor = r;
    }
    if cursor > t.stop_ns {
        return Some(format!("resumed ({cursor}) after stop ({})", t.stop_ns));
    }
    None
}
