//! Event-driven task timers and the flat per-annotation profile.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::{BuildHasherDefault, Hasher};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::exec::{Guid, Label, TaskEvent, TaskEventKind, TaskListener};

/// Timing of one finished task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimerRecord {
    pub guid: Guid,
    pub parent_guid: Guid,
    pub annotation: String,
    /// Worker the task started on.
    pub worker: usize,
    pub created_ns: u64,
    pub start_ns: u64,
    pub stop_ns: u64,
    /// `(yield, resume)` pairs.
    pub yields: Vec<(u64, u64)>,
    pub failed: bool,
}

impl TimerRecord {
    pub fn yielded_ns(&self) -> u64 {
        self.yields.iter().map(|(a, b)| b - a).sum()
    }

    /// Running time: wall span minus time spent yielded or blocked.
    pub fn inclusive_ns(&self) -> u64 {
        (self.stop_ns - self.start_ns).saturating_sub(self.yielded_ns())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub annotation: String,
    pub calls: u64,
    pub inclusive_ns: u64,
    pub exclusive_ns: u64,
}

impl ProfileEntry {
    pub fn inclusive_ms(&self) -> f64 {
        self.inclusive_ns as f64 / 1e6
    }

    pub fn exclusive_ms(&self) -> f64 {
        self.exclusive_ns as f64 / 1e6
    }
}

/// Aggregated timings keyed by annotation. Task timers and nested annotated
/// scopes both land here; each timed invocation counts as one call.
///
/// Each recording thread writes to its own shard; snapshots merge them.
pub struct ProfileStore {
    shards: Vec<Mutex<StoreShard>>,
}

#[derive(Default)]
struct StoreShard {
    entries: Vec<ProfileEntry>,
    index: HashMap<String, usize>,
    /// Entry hit by the previous `add`; consecutive tasks usually share a label.
    last: usize,
}

const STORE_SHARDS: usize = 16;

static NEXT_STORE_SHARD: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static STORE_SHARD: usize = NEXT_STORE_SHARD.fetch_add(1, Ordering::Relaxed) % STORE_SHARDS;
}

impl Default for ProfileStore {
    fn default() -> Self {
        Self {
            shards: (0..STORE_SHARDS)
                .map(|_| Mutex::new(StoreShard::default()))
                .collect(),
        }
    }
}

impl ProfileStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, annotation: &str, inclusive_ns: u64, exclusive_ns: u64) {
        let mut shard = self.shards[STORE_SHARD.with(|s| *s)].lock().unwrap();
        let StoreShard {
            entries,
            index,
            last,
        } = &mut *shard;
        let i = match entries.get(*last) {
            Some(e) if e.annotation == annotation => *last,
            _ => match index.get(annotation) {
                Some(&i) => i,
                None => {
                    index.insert(annotation.to_owned(), entries.len());
                    entries.push(ProfileEntry {
                        annotation: annotation.to_owned(),
                        ..ProfileEntry::default()
                    });
                    entries.len() - 1
                }
            },
        };
        *last = i;
        let e = &mut entries[i];
        e.calls += 1;
        e.inclusive_ns += inclusive_ns;
        e.exclusive_ns += exclusive_ns;
    }

    pub fn snapshot(&self) -> Vec<ProfileEntry> {
        let mut merged: HashMap<String, ProfileEntry> = HashMap::new();
        for shard in &self.shards {
            for e in &shard.lock().unwrap().entries {
                let m = merged
                    .entry(e.annotation.clone())
                    .or_insert_with(|| ProfileEntry {
                        annotation: e.annotation.clone(),
                        ..ProfileEntry::default()
                    });
                m.calls += e.calls;
                m.inclusive_ns += e.inclusive_ns;
                m.exclusive_ns += e.exclusive_ns;
            }
        }
        merged.into_values().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.shards
            .iter()
            .all(|s| s.lock().unwrap().entries.is_empty())
    }
}

/// Entries sorted by exclusive time (descending, ties by name) and truncated
/// to `top_n`.
pub fn profile_report(store: &ProfileStore, top_n: usize) -> Vec<ProfileEntry> {
    let mut entries = store.snapshot();
    sort_profile(&mut entries);
    entries.truncate(top_n);
    entries
}

pub fn sort_profile(entries: &mut [ProfileEntry]) {
    entries.sort_by(|a, b| {
        b.exclusive_ns
            .cmp(&a.exclusive_ns)
            .then_with(|| a.annotation.cmp(&b.annotation))
    });
}

/// Plain-text table: annotation, calls, inclusive ms, exclusive ms.
pub fn render_profile(entries: &[ProfileEntry]) -> String {
    let width = entries
        .iter()
        .map(|e| e.annotation.len())
        .chain(std::iter::once("annotation".len()))
        .max()
        .unwrap_or(10);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>10}  {:>14}  {:>14}",
        "annotation", "calls", "inclusive_ms", "exclusive_ms"
    );
    for e in entries {
        let _ = writeln!(
            out,
            "{:<width$}  {:>10}  {:>14.3}  {:>14.3}",
            e.annotation,
            e.calls,
            e.inclusive_ms(),
            e.exclusive_ms()
        );
    }
    out
}

struct Scope {
    label: Label,
    start: u64,
    yielded_at_entry: u64,
    child_ns: u64,
}

struct ActiveTimer {
    parent_guid: Guid,
    label: Label,
    worker: usize,
    created_ns: u64,
    start_ns: u64,
    yields: Vec<(u64, u64)>,
    yield_start: Option<u64>,
    yielded_ns: u64,
    scopes: Vec<Scope>,
    /// Time spent in nested scopes directly under the task body.
    child_ns: u64,
}

const SHARDS: usize = 64;

/// Fibonacci hashing for sequential guids.
#[derive(Default)]
struct GuidHasher(u64);

impl Hasher for GuidHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
    }

    fn write_u64(&mut self, n: u64) {
        self.0 = n.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    }
}

type TimerMap = HashMap<Guid, ActiveTimer, BuildHasherDefault<GuidHasher>>;

type RecordSink = Box<dyn Fn(&TimerRecord) + Send + Sync>;

/// Task listener that turns lifecycle events into [`TimerRecord`]s and
/// aggregates them into a [`ProfileStore`].
pub struct Profiler {
    shards: Vec<Mutex<TimerMap>>,
    store: Arc<ProfileStore>,
    sink: Option<RecordSink>,
    keep: Option<Mutex<Vec<TimerRecord>>>,
    finished: AtomicU64,
}

impl Default for Profiler {
    fn default() -> Self {
        Self::new()
    }
}

impl Profiler {
    pub fn new() -> Self {
        Self {
            shards: (0..SHARDS)
                .map(|_| Mutex::new(TimerMap::default()))
                .collect(),
            store: Arc::new(ProfileStore::new()),
            sink: None,
            keep: None,
            finished: AtomicU64::new(0),
        }
    }

    /// Calls `sink` with every finished timer (e.g. to stream it to a trace).
    pub fn with_sink(mut self, sink: impl Fn(&TimerRecord) + Send + Sync + 'static) -> Self {
        self.sink = Some(Box::new(sink));
        self
    }

    /// Keeps finished timers in memory for [`Profiler::records`].
    pub fn keep_records(mut self) -> Self {
        self.keep = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn store(&self) -> &Arc<ProfileStore> {
        &self.store
    }

    pub fn report(&self, top_n: usize) -> Vec<ProfileEntry> {
        profile_report(&self.store, top_n)
    }

    pub fn records(&self) -> Vec<TimerRecord> {
        self.keep
            .as_ref()
            .map(|k| k.lock().unwrap().clone())
            .unwrap_or_default()
    }

    pub fn tasks_finished(&self) -> u64 {
        self.finished.load(Ordering::Relaxed)
    }

    /// Timers of tasks that have not stopped yet.
    pub fn active(&self) -> usize {
        self.shards.iter().map(|s| s.lock().unwrap().len()).sum()
    }

    fn shard(&self, guid: Guid) -> &Mutex<TimerMap> {
        &self.shards[(guid as usize) % SHARDS]
    }

    fn with_timer(&self, guid: Guid, f: impl FnOnce(&mut ActiveTimer)) {
        if let Some(t) = self.shard(guid).lock().unwrap().get_mut(&guid) {
            f(t);
        }
    }

    fn finish(&self, guid: Guid, t: ActiveTimer, stop: u64, failed: bool) {
        let inclusive = (stop - t.start_ns).saturating_sub(t.yielded_ns);
        let exclusive = inclusive.saturating_sub(t.child_ns);
        self.store.add(&t.label, inclusive, exclusive);
        if self.sink.is_some() || self.keep.is_some() {
            let record = TimerRecord {
                guid,
                parent_guid: t.parent_guid,
                annotation: t.label.to_string(),
                worker: t.worker,
                created_ns: t.created_ns,
                start_ns: t.start_ns,
                stop_ns: stop,
                yields: t.yields,
                failed,
            };
            if let Some(sink) = &self.sink {
                sink(&record);
            }
            if let Some(keep) = &self.keep {
                keep.lock().unwrap().push(record);
            }
        }
        self.finished.fetch_add(1, Ordering::Relaxed);
    }
}

impl TaskListener for Profiler {
    fn on_event(&self, e: &TaskEvent<'_>) {
        let ts = e.timestamp_ns;
        match e.kind {
            TaskEventKind::Created => {
                let timer = ActiveTimer {
                    parent_guid: e.parent_guid,
                    label: e.annotation.clone(),
                    worker: 0,
                    created_ns: ts,
                    start_ns: ts,
                    yields: Vec::new(),
                    yield_start: None,
                    yielded_ns: 0,
                    scopes: Vec::new(),
                    child_ns: 0,
                };
                self.shard(e.guid).lock().unwrap().insert(e.guid, timer);
            }
            TaskEventKind::Started => self.with_timer(e.guid, |t| {
                t.start_ns = ts;
                t.worker = e.worker.unwrap_or(0);
            }),
            TaskEventKind::Yielded => self.with_timer(e.guid, |t| t.yield_start = Some(ts)),
            TaskEventKind::Resumed => self.with_timer(e.guid, |t| {
                if let Some(y) = t.yield_start.take() {
                    t.yields.push((y, ts));
                    t.yielded_ns += ts - y;
                }
            }),
            TaskEventKind::ScopeEnter => self.with_timer(e.guid, |t| {
                let yielded_at_entry = t.yielded_ns;
                t.scopes.push(Scope {
                    label: e.annotation.clone(),
                    start: ts,
                    yielded_at_entry,
                    child_ns: 0,
                });
            }),
            TaskEventKind::ScopeExit => {
                let mut done = None;
                self.with_timer(e.guid, |t| {
                    let Some(scope) = t.scopes.pop() else { return };
                    let yielded = t.yielded_ns - scope.yielded_at_entry;
                    let inclusive = (ts - scope.start).saturating_sub(yielded);
                    match t.scopes.last_mut() {
                        Some(parent) => parent.child_ns += inclusive,
                        None => t.child_ns += inclusive,
                    }
                    done = Some((
                        scope.label,
                        inclusive,
                        inclusive.saturating_sub(scope.child_ns),
                    ));
                });
                if let Some((label, incl, excl)) = done {
                    self.store.add(&label, incl, excl);
                }
            }
            TaskEventKind::Stopped => {
                let timer = self.shard(e.guid).lock().unwrap().remove(&e.guid);
                if let Some(t) = timer {
                    self.finish(e.guid, t, ts, e.failed);
                }
            }
            TaskEventKind::Enqueued | TaskEventKind::Warning => {}
        }
    }
}
