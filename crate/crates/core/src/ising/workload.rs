//! Walker/accumulator producer-consumer workload.
//!
//! `W` walker tasks advance independent Metropolis chains. After burn-in,
//! each update hands a lattice copy to an idle accumulator pulled from the
//! head of a shared FIFO; the accumulator measures it, appends the record to
//! the sink, and puts itself back at the tail. Walkers block on the queue's
//! condition variable while every accumulator is busy.
//!
//! The total `M` is split into fixed per-walker quotas (`M / W`, the first
//! `M % W` walkers take one more), so each walker's record stream is the
//! first `quota` post-burn-in updates of its chain and the total is exact.

use std::collections::{BTreeMap, VecDeque};
use std::fs::File;
use std::io::{self, BufWriter};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::stats::{binned_std_error, DEFAULT_BINS};
use super::walker::{measure_state, MeasurementRecord, Snapshot, WalkerState};
use crate::exec::{ExecHandle, FutureHandle, SpawnError, TaskCondvar, TaskError, TaskMutex};

pub const WALKER: &str = "walker";
pub const ACCUMULATOR: &str = "accumulator";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub lattice: usize,
    pub beta: f64,
    pub walkers: usize,
    pub accumulators: usize,
    pub measurements: u64,
    pub burn_in: u64,
    pub seed: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            lattice: 4,
            beta: 0.3,
            walkers: 4,
            accumulators: 2,
            measurements: 10_000,
            burn_in: 1_000,
            seed: 1,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::InvalidConfig(m.to_owned()));
        if self.lattice < 2 {
            return bad("lattice side must be at least 2");
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return bad("beta must be finite and non-negative");
        }
        if self.walkers == 0 {
            return bad("at least one walker is required");
        }
        if self.accumulators == 0 {
            return bad("at least one accumulator is required");
        }
        if self.measurements == 0 {
            return bad("measurement target must be at least 1");
        }
        Ok(())
    }

    pub fn quota(&self, walker: usize) -> u64 {
        let w = self.walkers as u64;
        self.measurements / w + u64::from((walker as u64) < self.measurements % w)
    }
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct SinkError(pub String);

impl From<io::Error> for SinkError {
    fn from(e: io::Error) -> Self {
        SinkError(e.to_string())
    }
}

impl From<csv::Error> for SinkError {
    fn from(e: csv::Error) -> Self {
        SinkError(e.to_string())
    }
}

/// Destination for measurement records; appended to concurrently.
pub trait MeasurementSink: Send + Sync {
    fn append(&self, record: &MeasurementRecord) -> Result<(), SinkError>;

    fn flush(&self) -> Result<(), SinkError> {
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct NullSink;

impl MeasurementSink for NullSink {
    fn append(&self, _: &MeasurementRecord) -> Result<(), SinkError> {
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct VecSink(Mutex<Vec<MeasurementRecord>>);

impl VecSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> Vec<MeasurementRecord> {
        self.0.lock().unwrap().clone()
    }
}

impl MeasurementSink for VecSink {
    fn append(&self, record: &MeasurementRecord) -> Result<(), SinkError> {
        self.0.lock().unwrap().push(*record);
        Ok(())
    }
}

/// CSV with columns `walker_id,update_index,E,absM`.
pub struct CsvSink(Mutex<csv::Writer<BufWriter<File>>>);

impl CsvSink {
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = BufWriter::new(File::create(path)?);
        Ok(Self(Mutex::new(csv::Writer::from_writer(file))))
    }
}

impl MeasurementSink for CsvSink {
    fn append(&self, record: &MeasurementRecord) -> Result<(), SinkError> {
        Ok(self.0.lock().unwrap().serialize(record)?)
    }

    fn flush(&self) -> Result<(), SinkError> {
        Ok(self.0.lock().unwrap().flush()?)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorkloadResult {
    pub config: WorkloadConfig,
    pub measurements: u64,
    pub mean_energy: f64,
    pub std_error_energy: f64,
    pub mean_abs_magnetization: f64,
    pub std_error_abs_magnetization: f64,
    pub wall_time_ns: u64,
    /// Tasks spawned per annotation.
    pub annotation_counts: BTreeMap<String, u64>,
    /// Records per walker, in update order.
    #[serde(skip)]
    pub streams: Vec<Vec<MeasurementRecord>>,
}

impl WorkloadResult {
    fn from_streams(
        config: &WorkloadConfig,
        streams: Vec<Vec<MeasurementRecord>>,
        wall_time_ns: u64,
    ) -> Self {
        let energy: Vec<Vec<f64>> = streams
            .iter()
            .map(|s| s.iter().map(|r| r.energy as f64).collect())
            .collect();
        let abs_m: Vec<Vec<f64>> = streams
            .iter()
            .map(|s| s.iter().map(|r| r.abs_magnetization as f64).collect())
            .collect();
        let n: usize = streams.iter().map(Vec::len).sum();
        let total = |chains: &[Vec<f64>]| chains.iter().flatten().sum::<f64>() / n as f64;
        let mut counts = BTreeMap::new();
        counts.insert(WALKER.to_owned(), config.walkers as u64);
        counts.insert(ACCUMULATOR.to_owned(), config.accumulators as u64);
        Self {
            config: config.clone(),
            measurements: n as u64,
            mean_energy: total(&energy),
            std_error_energy: binned_std_error(&energy, DEFAULT_BINS),
            mean_abs_magnetization: total(&abs_m),
            std_error_abs_magnetization: binned_std_error(&abs_m, DEFAULT_BINS),
            wall_time_ns,
            annotation_counts: counts,
            streams,
        }
    }

    pub fn records(&self) -> impl Iterator<Item = &MeasurementRecord> {
        self.streams.iter().flatten()
    }
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload: {0}")]
    InvalidConfig(String),
    #[error("cannot spawn workload task: {0}")]
    Spawn(#[from] SpawnError),
    #[error("workload task failed: {0}")]
    Task(#[from] TaskError),
    #[error("measurement sink failed after {} records: {error}", partial.measurements)]
    Sink {
        error: SinkError,
        partial: Box<WorkloadResult>,
    },
}

#[derive(Default)]
struct Mailbox {
    slot: Option<Snapshot>,
    shutdown: bool,
}

#[derive(Default)]
struct Accumulator {
    mailbox: TaskMutex<Mailbox>,
    ready: TaskCondvar,
    busy: AtomicBool,
}

struct Shared {
    /// Idle accumulators, FIFO.
    queue: TaskMutex<VecDeque<usize>>,
    idle: TaskCondvar,
    accumulators: Vec<Accumulator>,
    sink: Arc<dyn MeasurementSink>,
    streams: Mutex<Vec<Vec<MeasurementRecord>>>,
    recorded: AtomicU64,
    aborted: AtomicBool,
    error: Mutex<Option<SinkError>>,
}

impl Shared {
    fn abort(&self) {
        let _q = self.queue.lock();
        self.aborted.store(true, Ordering::SeqCst);
        self.idle.notify_all();
    }

    fn shutdown_accumulators(&self) {
        for acc in &self.accumulators {
            acc.mailbox.lock().shutdown = true;
            acc.ready.notify_all();
        }
    }

    fn pull_idle(&self) -> Option<usize> {
        let q = self.queue.lock();
        let mut q = self
            .idle
            .wait_while(q, |q| q.is_empty() && !self.aborted.load(Ordering::SeqCst));
        if self.aborted.load(Ordering::SeqCst) {
            None
        } else {
            q.pop_front()
        }
    }

    fn walker(&self, config: &WorkloadConfig, id: usize) -> u64 {
        let quota = config.quota(id);
        let mut state = WalkerState::new(id, config.lattice, config.beta, config.seed);
        let mut sent = 0;
        while sent < quota && !self.aborted.load(Ordering::Relaxed) {
            state.mc_update();
            if state.update_index() <= config.burn_in {
                continue;
            }
            let Some(acc) = self.pull_idle() else { break };
            let acc = &self.accumulators[acc];
            {
                let mut mb = acc.mailbox.lock();
                assert!(mb.slot.is_none(), "idle accumulator had a pending snapshot");
                mb.slot = Some(state.snapshot());
            }
            acc.ready.notify_one();
            sent += 1;
        }
        sent
    }

    fn accumulator(&self, id: usize) {
        let acc = &self.accumulators[id];
        loop {
            let snap = {
                let mb = acc.mailbox.lock();
                let mut mb = acc
                    .ready
                    .wait_while(mb, |m| m.slot.is_none() && !m.shutdown);
                match mb.slot.take() {
                    Some(s) => s,
                    None => break,
                }
            };
            assert!(
                !acc.busy.swap(true, Ordering::SeqCst),
                "accumulator {id} measured two snapshots at once"
            );
            let rec = measure_state(&snap);
            if !self.aborted.load(Ordering::SeqCst) {
                match self.sink.append(&rec) {
                    Ok(()) => {
                        self.streams.lock().unwrap()[rec.walker_id].push(rec);
                        self.recorded.fetch_add(1, Ordering::Relaxed);
                    }
                    Err(e) => {
                        self.error.lock().unwrap().get_or_insert(e);
                        self.abort();
                    }
                }
            }
            acc.busy.store(false, Ordering::SeqCst);
            {
                let mut q = self.queue.lock();
                debug_assert!(!q.contains(&id));
                q.push_back(id);
            }
            self.idle.notify_one();
        }
    }
}

/// Runs the workload to completion on `exec` and reports aggregates.
pub fn run_workload(
    exec: &ExecHandle,
    config: &WorkloadConfig,
    sink: Arc<dyn MeasurementSink>,
) -> Result<WorkloadResult, WorkloadError> {
    config.validate()?;
    let shared = Arc::new(Shared {
        queue: TaskMutex::new((0..config.accumulators).collect()),
        idle: TaskCondvar::new(),
        accumulators: (0..config.accumulators)
            .map(|_| Accumulator::default())
            .collect(),
        sink,
        streams: Mutex::new(vec![Vec::new(); config.walkers]),
        recorded: AtomicU64::new(0),
        aborted: AtomicBool::new(false),
        error: Mutex::new(None),
    });
    let started = Instant::now();

    let mut accumulators: Vec<FutureHandle<()>> = Vec::with_capacity(config.accumulators);
    let mut walkers: Vec<FutureHandle<u64>> = Vec::with_capacity(config.walkers);
    let mut spawn_error = None;
    for id in 0..config.accumulators {
        let s = shared.clone();
        match exec.spawn_named(ACCUMULATOR, move || s.accumulator(id)) {
            Ok(f) => accumulators.push(f),
            Err(e) => {
                spawn_error = Some(e);
                break;
            }
        }
    }
    if spawn_error.is_none() {
        for id in 0..config.walkers {
            let s = shared.clone();
            let cfg = config.clone();
            match exec.spawn_named(WALKER, move || s.walker(&cfg, id)) {
                Ok(f) => walkers.push(f),
                Err(e) => {
                    spawn_error = Some(e);
                    break;
                }
            }
        }
    }
    if spawn_error.is_some() {
        shared.abort();
    }

    let mut task_error = None;
    for w in walkers {
        if let Err(e) = w.wait() {
            task_error.get_or_insert(e);
            shared.abort();
        }
    }
    shared.shutdown_accumulators();
    for a in accumulators {
        if let Err(e) = a.wait() {
            task_error.get_or_insert(e);
        }
    }
    let flushed = shared.sink.flush();
    let wall_time_ns = started.elapsed().as_nanos() as u64;

    if let Some(e) = spawn_error {
        return Err(e.into());
    }
    if let Some(e) = task_error {
        return Err(e.into());
    }
    let streams = std::mem::take(&mut *shared.streams.lock().unwrap());
    let mut result = WorkloadResult::from_streams(config, streams, wall_time_ns);
    for s in &mut result.streams {
        s.sort_by_key(|r| r.update_index);
    }
    let sink_error = shared.error.lock().unwrap().take().or(flushed.err());
    match sink_error {
        Some(error) => Err(WorkloadError::Sink {
            error,
            partial: Box::new(result),
        }),
        None => Ok(result),
    }
}
