//! Backend-neutral task, future and synchronization API.
//!
//! An [`Executor`] is configured with an [`ExecutorConfig`], optionally given
//! [`TaskListener`]s, then started. Work is submitted through the returned
//! [`ExecHandle`], which is cheap to clone and may be moved into tasks.
//!
//! ```
//! use taskbench_core::{Backend, Executor, ExecutorConfig};
//!
//! let mut exec = Executor::new(ExecutorConfig::new(Backend::UserTasks, 2)).unwrap();
//! let handle = exec.start().unwrap();
//! let f = handle.spawn(|| 6 * 7).unwrap();
//! assert_eq!(f.wait().unwrap(), 42);
//! let summary = exec.shutdown();
//! assert_eq!(summary.tasks_completed, 1);
//! ```

pub(crate) mod context;
pub mod events;
mod future;
mod os_pool;
pub mod queue;
pub mod sync;
mod task;
mod user_tasks;

use std::any::Any;
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::RunClock;

pub use events::{TaskEvent, TaskEventKind, TaskListener};
pub use future::FutureHandle;
pub use queue::{WorkerQueue, WorkerQueues};
pub use sync::{TaskCondvar, TaskMutex, TaskMutexGuard};
pub use task::{
    annotated, Annotated, Guid, Label, TaskBody, TaskDescriptor, TaskInfo, TaskState, ROOT_GUID,
};

use future::Completion;
use os_pool::OsPool;
use task::{next_guid, TaskHeader};
use user_tasks::UserSched;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    /// One OS thread per worker, round-robin dispatch, kernel-level blocking.
    OsPool,
    /// Cooperative user-level tasks over per-worker FCFS queues with stealing.
    UserTasks,
}

impl Backend {
    pub const ALL: [Backend; 2] = [Backend::OsPool, Backend::UserTasks];

    pub fn as_str(self) -> &'static str {
        match self {
            Backend::OsPool => "os-pool",
            Backend::UserTasks => "user-tasks",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "os-pool" => Ok(Backend::OsPool),
            "user-tasks" => Ok(Backend::UserTasks),
            other => Err(format!(
                "unknown backend `{other}` (expected `os-pool` or `user-tasks`)"
            )),
        }
    }
}

pub const DEFAULT_STACK_SIZE: usize = 256 * 1024;
const MIN_STACK_SIZE: usize = 16 * 1024;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutorConfig {
    pub backend: Backend,
    pub workers: usize,
    /// Ignored by the OS pool.
    pub steal_enabled: bool,
    /// Per-queue bound; `None` means unbounded.
    pub queue_capacity: Option<usize>,
    /// OS pool only: while a task's thread is blocked in a wait, its queue is
    /// served by a replacement thread. Disabling it exposes the classic
    /// nested-wait deadlock on a saturated pool.
    pub blocking_handoff: bool,
    /// User-level task stack size in bytes.
    pub stack_size: usize,
}

impl ExecutorConfig {
    pub fn new(backend: Backend, workers: usize) -> Self {
        Self {
            backend,
            workers,
            steal_enabled: true,
            queue_capacity: None,
            blocking_handoff: true,
            stack_size: DEFAULT_STACK_SIZE,
        }
    }

    pub fn with_steal(mut self, enabled: bool) -> Self {
        self.steal_enabled = enabled;
        self
    }

    pub fn with_queue_capacity(mut self, capacity: Option<usize>) -> Self {
        self.queue_capacity = capacity;
        self
    }

    pub fn with_blocking_handoff(mut self, enabled: bool) -> Self {
        self.blocking_handoff = enabled;
        self
    }

    pub fn with_stack_size(mut self, bytes: usize) -> Self {
        self.stack_size = bytes;
        self
    }

    pub fn validate(&self) -> Result<(), ExecError> {
        if self.workers == 0 {
            return Err(ExecError::NoWorkers);
        }
        if self.queue_capacity == Some(0) {
            return Err(ExecError::ZeroCapacity);
        }
        if self.stack_size < MIN_STACK_SIZE {
            return Err(ExecError::StackTooSmall(self.stack_size));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("workers must be at least 1")]
    NoWorkers,
    #[error("queue capacity must be at least 1")]
    ZeroCapacity,
    #[error("task stack of {0} bytes is too small")]
    StackTooSmall(usize),
    #[error("executor already started")]
    AlreadyStarted,
    #[error("listeners can only be attached before the executor starts")]
    ListenerAfterStart,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpawnError {
    #[error("executor is shut down")]
    Rejected,
    #[error("queue of worker {worker} is full (capacity {capacity})")]
    Backpressure { worker: usize, capacity: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaskError {
    #[error("task {guid} panicked: {message}")]
    Panicked { guid: Guid, message: String },
}

/// What a finished task body hands back to its worker: whether it failed,
/// and the action that publishes its result to the future. Workers emit the
/// stop event before publishing so listeners see it before any waiter wakes.
pub(crate) struct TaskOutcome {
    pub(crate) failed: bool,
    pub(crate) publish: Box<dyn FnOnce() + Send>,
}

pub(crate) struct Job {
    pub(crate) header: Arc<TaskHeader>,
    pub(crate) run: Box<dyn FnOnce() -> TaskOutcome + Send>,
}

/// Union of busy intervals for one worker. More than one task can hold a
/// worker busy at once on the OS pool (a blocked task plus the replacement
/// thread serving its queue).
#[derive(Default)]
struct BusyClock {
    active: u32,
    since: u64,
    total: u64,
}

#[derive(Default)]
pub(crate) struct WorkerStats {
    pub(crate) executed: AtomicU64,
    pub(crate) enqueued: AtomicU64,
    busy: Mutex<BusyClock>,
}

impl WorkerStats {
    pub(crate) fn busy_begin(&self, now: u64) {
        let mut b = self.busy.lock().unwrap();
        if b.active == 0 {
            b.since = now;
        }
        b.active += 1;
    }

    pub(crate) fn busy_end(&self, now: u64) {
        let mut b = self.busy.lock().unwrap();
        b.active -= 1;
        if b.active == 0 {
            b.total += now.saturating_sub(b.since);
        }
    }

    /// Cumulative busy nanoseconds up to `now`.
    pub(crate) fn busy_ns(&self, now: u64) -> u64 {
        let b = self.busy.lock().unwrap();
        if b.active > 0 {
            b.total + now.saturating_sub(b.since)
        } else {
            b.total
        }
    }
}

static NEXT_EXEC_ID: AtomicU64 = AtomicU64::new(1);

/// State shared by an executor's handles and worker threads.
pub(crate) struct Shared {
    pub(crate) id: u64,
    pub(crate) config: ExecutorConfig,
    pub(crate) clock: RunClock,
    listeners: Vec<Arc<dyn TaskListener>>,
    pub(crate) stats: Vec<WorkerStats>,
    live: AtomicUsize,
    drain_lock: Mutex<()>,
    drained: Condvar,
    spawned: AtomicU64,
    completed: AtomicU64,
    failed: AtomicU64,
    accepting: AtomicBool,
    started_at: Instant,
    summary: Mutex<Option<ExecutionSummary>>,
}

impl Shared {
    /// Run-clock time for an event about to be emitted; 0 (and no clock
    /// read) when nobody listens.
    #[inline]
    pub(crate) fn event_time(&self) -> u64 {
        if self.listeners.is_empty() {
            0
        } else {
            self.clock.now_ns()
        }
    }

    /// Emits a lifecycle event of `header` stamped `timestamp_ns`.
    #[inline]
    pub(crate) fn emit_at(
        &self,
        kind: TaskEventKind,
        header: &TaskHeader,
        worker: Option<usize>,
        failed: bool,
        timestamp_ns: u64,
    ) {
        if self.listeners.is_empty() {
            return;
        }
        self.dispatch(&TaskEvent {
            kind,
            guid: header.guid,
            parent_guid: header.parent,
            annotation: &header.label,
            worker,
            timestamp_ns,
            failed,
        });
    }

    pub(crate) fn emit_raw(
        &self,
        kind: TaskEventKind,
        guid: Guid,
        parent_guid: Guid,
        annotation: &Label,
        worker: Option<usize>,
        failed: bool,
    ) {
        if self.listeners.is_empty() {
            return;
        }
        self.dispatch(&TaskEvent {
            kind,
            guid,
            parent_guid,
            annotation,
            worker,
            timestamp_ns: self.clock.now_ns(),
            failed,
        });
    }

    fn dispatch(&self, event: &TaskEvent<'_>) {
        for l in &self.listeners {
            l.on_event(event);
        }
    }

    pub(crate) fn task_finished(&self, worker: usize, failed: bool) {
        self.stats[worker].executed.fetch_add(1, Ordering::Relaxed);
        if failed {
            self.failed.fetch_add(1, Ordering::Relaxed);
        } else {
            self.completed.fetch_add(1, Ordering::Relaxed);
        }
        self.release_live();
    }

    fn release_live(&self) {
        if self.live.fetch_sub(1, Ordering::SeqCst) == 1 {
            let _g = self.drain_lock.lock().unwrap();
            self.drained.notify_all();
        }
    }

    fn wait_drained(&self) {
        let mut g = self.drain_lock.lock().unwrap();
        while self.live.load(Ordering::SeqCst) != 0 {
            g = self.drained.wait(g).unwrap();
        }
    }

    fn busy_ns(&self) -> Vec<u64> {
        let now = self.clock.now_ns();
        self.stats.iter().map(|s| s.busy_ns(now)).collect()
    }
}

#[derive(Clone)]
enum Runtime {
    Os(Arc<OsPool>),
    User(Arc<UserSched>),
}

/// Per-run totals returned by [`Executor::shutdown`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionSummary {
    pub backend: Backend,
    pub workers: usize,
    pub tasks_spawned: u64,
    pub tasks_completed: u64,
    pub tasks_failed: u64,
    pub executed_per_worker: Vec<u64>,
    pub enqueued_per_worker: Vec<u64>,
    pub steals_per_worker: Vec<u64>,
    pub busy_ns_per_worker: Vec<u64>,
    /// OS threads created over the run (OS pool includes blocking replacements).
    pub os_threads: u64,
    pub wall_time_ns: u64,
}

impl ExecutionSummary {
    fn empty(config: &ExecutorConfig) -> Self {
        let zeros = vec![0; config.workers];
        Self {
            backend: config.backend,
            workers: config.workers,
            tasks_spawned: 0,
            tasks_completed: 0,
            tasks_failed: 0,
            executed_per_worker: zeros.clone(),
            enqueued_per_worker: zeros.clone(),
            steals_per_worker: zeros.clone(),
            busy_ns_per_worker: zeros,
            os_threads: 0,
            wall_time_ns: 0,
        }
    }

    pub fn steals_total(&self) -> u64 {
        self.steals_per_worker.iter().sum()
    }
}

/// Owner of a worker pool. Dropping a started executor shuts it down.
pub struct Executor {
    config: ExecutorConfig,
    clock: RunClock,
    listeners: Vec<Arc<dyn TaskListener>>,
    handle: Option<ExecHandle>,
}

impl Executor {
    pub fn new(config: ExecutorConfig) -> Result<Self, ExecError> {
        Self::with_clock(config, RunClock::new())
    }

    /// Uses `clock` for event timestamps so that samplers and trace writers
    /// can share one time base with the executor.
    pub fn with_clock(config: ExecutorConfig, clock: RunClock) -> Result<Self, ExecError> {
        config.validate()?;
        Ok(Self {
            config,
            clock,
            listeners: Vec::new(),
            handle: None,
        })
    }

    pub fn config(&self) -> &ExecutorConfig {
        &self.config
    }

    pub fn clock(&self) -> RunClock {
        self.clock
    }

    pub fn attach_listener(&mut self, listener: Arc<dyn TaskListener>) -> Result<(), ExecError> {
        if self.handle.is_some() {
            return Err(ExecError::ListenerAfterStart);
        }
        self.listeners.push(listener);
        Ok(())
    }

    pub fn start(&mut self) -> Result<ExecHandle, ExecError> {
        if self.handle.is_some() {
            return Err(ExecError::AlreadyStarted);
        }
        let workers = self.config.workers;
        let shared = Arc::new(Shared {
            id: NEXT_EXEC_ID.fetch_add(1, Ordering::Relaxed),
            config: self.config.clone(),
            clock: self.clock,
            listeners: std::mem::take(&mut self.listeners),
            stats: (0..workers).map(|_| WorkerStats::default()).collect(),
            live: AtomicUsize::new(0),
            drain_lock: Mutex::new(()),
            drained: Condvar::new(),
            spawned: AtomicU64::new(0),
            completed: AtomicU64::new(0),
            failed: AtomicU64::new(0),
            accepting: AtomicBool::new(true),
            started_at: Instant::now(),
            summary: Mutex::new(None),
        });
        let runtime = match self.config.backend {
            Backend::OsPool => Runtime::Os(OsPool::start(shared.clone())),
            Backend::UserTasks => Runtime::User(UserSched::start(shared.clone())),
        };
        let handle = ExecHandle { shared, runtime };
        self.handle = Some(handle.clone());
        Ok(handle)
    }

    /// Handle of a started executor.
    pub fn handle(&self) -> Option<&ExecHandle> {
        self.handle.as_ref()
    }

    pub fn spawn<B: TaskBody>(&self, body: B) -> Result<FutureHandle<B::Output>, SpawnError> {
        match &self.handle {
            Some(h) => h.spawn(body),
            None => Err(SpawnError::Rejected),
        }
    }

    /// Waits for every submitted task to finish, stops the workers and
    /// returns the run summary. Calling it again returns the same summary.
    ///
    /// # Panics
    /// If called from inside one of this executor's tasks.
    pub fn shutdown(&self) -> ExecutionSummary {
        match &self.handle {
            Some(h) => h.shutdown(),
            None => ExecutionSummary::empty(&self.config),
        }
    }
}

impl Drop for Executor {
    fn drop(&mut self) {
        if let Some(h) = &self.handle {
            if context::current_worker_of(h.shared.id).is_none() {
                h.shutdown();
            }
        }
    }
}

impl fmt::Debug for Executor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Executor")
            .field("config", &self.config)
            .field("started", &self.handle.is_some())
            .finish()
    }
}

/// Cloneable access to a running executor.
#[derive(Clone)]
pub struct ExecHandle {
    shared: Arc<Shared>,
    runtime: Runtime,
}

impl ExecHandle {
    pub fn backend(&self) -> Backend {
        self.shared.config.backend
    }

    pub fn workers(&self) -> usize {
        self.shared.config.workers
    }

    pub fn config(&self) -> &ExecutorConfig {
        &self.shared.config
    }

    pub fn clock(&self) -> RunClock {
        self.shared.clock
    }

    /// Spawns `body`. The task's parent is the task currently running on the
    /// calling thread (root if none). OS pool: enqueued round-robin. User
    /// tasks: enqueued on the calling worker's queue, or worker 0 from
    /// outside the pool.
    pub fn spawn<B: TaskBody>(&self, body: B) -> Result<FutureHandle<B::Output>, SpawnError> {
        let shared = &self.shared;
        let inside = context::current_worker_of(shared.id);
        shared.live.fetch_add(1, Ordering::SeqCst);
        // Tasks that are still draining may keep spawning children.
        if !shared.accepting.load(Ordering::SeqCst) && inside.is_none() {
            shared.release_live();
            return Err(SpawnError::Rejected);
        }
        let parent = context::current_guid().unwrap_or(ROOT_GUID);
        let header = Arc::new(TaskHeader::new(next_guid(), parent, body.label()));
        let completion = Arc::new(Completion::new());
        let info = TaskInfo(header.clone());
        let guid = header.guid;
        let sink = completion.clone();
        let run = Box::new(move || {
            let (failed, result) = match catch_unwind(AssertUnwindSafe(|| body.run())) {
                Ok(v) => (false, Ok(v)),
                Err(payload) => (
                    true,
                    Err(TaskError::Panicked {
                        guid,
                        message: panic_message(payload.as_ref()),
                    }),
                ),
            };
            TaskOutcome {
                failed,
                publish: Box::new(move || sink.complete(result)),
            }
        });
        let job = Job { header, run };
        let submitted = match &self.runtime {
            Runtime::Os(pool) => pool.submit(job),
            Runtime::User(sched) => sched.submit(job, inside.unwrap_or(0)),
        };
        match submitted {
            Ok(_) => {
                shared.spawned.fetch_add(1, Ordering::Relaxed);
                Ok(FutureHandle::new(completion, info))
            }
            Err(e) => {
                shared.release_live();
                Err(e)
            }
        }
    }

    pub fn spawn_named<F, R>(
        &self,
        name: impl Into<Label>,
        work: F,
    ) -> Result<FutureHandle<R>, SpawnError>
    where
        F: FnOnce() -> R + Send + 'static,
        R: Send + 'static,
    {
        self.spawn(annotated(name, work))
    }

    /// Like [`yield_now`], but records a warning event when called from
    /// outside this executor's tasks.
    pub fn yield_now(&self) {
        if context::current_worker_of(self.shared.id).is_some() {
            yield_now();
        } else {
            log::warn!("yield_now called outside a task; ignored");
            self.shared.emit_raw(
                TaskEventKind::Warning,
                ROOT_GUID,
                ROOT_GUID,
                &Label::Static("yield_now outside task"),
                None,
                false,
            );
        }
    }

    pub fn mutex<T>(&self, value: T) -> TaskMutex<T> {
        TaskMutex::new(value)
    }

    pub fn condvar(&self) -> TaskCondvar {
        TaskCondvar::new()
    }

    /// Ready tasks per worker queue.
    pub fn queue_lengths(&self) -> Vec<usize> {
        match &self.runtime {
            Runtime::Os(pool) => pool.queue_lengths(),
            Runtime::User(sched) => sched.queue_lengths(),
        }
    }

    /// Cumulative nanoseconds each worker has spent running tasks.
    pub fn busy_ns(&self) -> Vec<u64> {
        self.shared.busy_ns()
    }

    /// Like [`ExecHandle::busy_ns`], evaluated at run-clock time `now_ns`.
    pub fn busy_ns_at(&self, now_ns: u64) -> Vec<u64> {
        self.shared
            .stats
            .iter()
            .map(|s| s.busy_ns(now_ns))
            .collect()
    }

    pub fn steals_per_worker(&self) -> Vec<u64> {
        match &self.runtime {
            Runtime::Os(_) => vec![0; self.workers()],
            Runtime::User(sched) => sched.steals(),
        }
    }

    pub fn steals_total(&self) -> u64 {
        self.steals_per_worker().iter().sum()
    }

    pub fn tasks_spawned(&self) -> u64 {
        self.shared.spawned.load(Ordering::Relaxed)
    }

    pub fn tasks_finished(&self) -> u64 {
        self.shared.completed.load(Ordering::Relaxed) + self.shared.failed.load(Ordering::Relaxed)
    }

    /// Whether the calling thread is currently running one of this
    /// executor's tasks.
    pub fn is_worker_thread(&self) -> bool {
        context::current_worker_of(self.shared.id).is_some()
    }

    /// See [`Executor::shutdown`].
    pub fn shutdown(&self) -> ExecutionSummary {
        let shared = &self.shared;
        assert!(
            context::current_worker_of(shared.id).is_none(),
            "shutdown called from inside one of the executor's own tasks"
        );
        let mut cached = shared.summary.lock().unwrap();
        if let Some(s) = cached.as_ref() {
            return s.clone();
        }
        shared.accepting.store(false, Ordering::SeqCst);
        shared.wait_drained();
        let (steals, os_threads) = match &self.runtime {
            Runtime::Os(pool) => {
                pool.stop_and_join();
                (vec![0; shared.config.workers], pool.threads_spawned())
            }
            Runtime::User(sched) => {
                sched.stop_and_join();
                (sched.steals(), shared.config.workers as u64)
            }
        };
        let summary = ExecutionSummary {
            backend: shared.config.backend,
            workers: shared.config.workers,
            tasks_spawned: shared.spawned.load(Ordering::Relaxed),
            tasks_completed: shared.completed.load(Ordering::Relaxed),
            tasks_failed: shared.failed.load(Ordering::Relaxed),
            executed_per_worker: shared
                .stats
                .iter()
                .map(|s| s.executed.load(Ordering::Relaxed))
                .collect(),
            enqueued_per_worker: shared
                .stats
                .iter()
                .map(|s| s.enqueued.load(Ordering::Relaxed))
                .collect(),
            steals_per_worker: steals,
            busy_ns_per_worker: shared.busy_ns(),
            os_threads,
            wall_time_ns: shared.started_at.elapsed().as_nanos() as u64,
        };
        *cached = Some(summary.clone());
        summary
    }
}

impl fmt::Debug for ExecHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExecHandle")
            .field("id", &self.shared.id)
            .field("backend", &self.backend())
            .field("workers", &self.workers())
            .finish()
    }
}

/// Cooperatively yields the current user-level task to the back of its
/// worker's queue. A no-op on the OS pool and outside tasks.
pub fn yield_now() {
    let user = context::with_current(|c| matches!(c, Some(context::Current::User { .. })));
    if user {
        user_tasks::suspend_current(user_tasks::Suspend::Yield);
    } else if context::current_guid().is_none() {
        log::debug!("yield_now called outside a task; ignored");
    }
}

/// The task running on the calling thread, if any.
pub fn current_task() -> Option<TaskInfo> {
    context::current_header().map(TaskInfo)
}

fn panic_message(payload: &(dyn Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_owned()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".to_owned()
    }
}
