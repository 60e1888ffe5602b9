//! Cooperative user-level task backend.
//!
//! Every task runs on its own stack as a coroutine. A fixed set of worker
//! threads each own a FCFS queue; tasks run until they finish, yield, or
//! block on a future or synchronization primitive, in which case the worker
//! switches to the next ready task without involving the kernel. Idle
//! workers steal from the back of their neighbours' queues in ring order.
//!
//! Blocked tasks are not kept in any queue; they sit in the waiter list of
//! whatever they wait on and are pushed back onto the queue of the worker
//! that last ran them when woken.

use std::ptr;
use std::sync::atomic::{AtomicBool, AtomicPtr, AtomicU8, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock, Weak};
use std::thread::{self, JoinHandle, Thread};
use std::time::{Duration, Instant};

use corosensei::stack::DefaultStack;
use corosensei::{Coroutine, CoroutineResult, Yielder};

use super::context::{self, Current};
use super::events::TaskEventKind;
use super::queue::WorkerQueues;
use super::task::{TaskHeader, TaskState};
use super::{Job, Shared, SpawnError, TaskOutcome};

/// Why a running task handed its worker back.
pub(crate) enum Suspend {
    Yield,
    Block,
}

type TaskYielder = Yielder<(), Suspend>;

struct TaskCoroutine(Coroutine<(), Suspend, TaskOutcome, DefaultStack>);

// SAFETY: a suspended task is only ever resumed by one worker at a time, and
// task bodies are `Send`. Values living on a task's stack across a
// suspension may end up being used from a different OS thread, which is the
// documented contract of the user-level backend.
unsafe impl Send for TaskCoroutine {}

const RUNNING: u8 = 0;
const PARKED: u8 = 1;
const NOTIFIED: u8 = 2;

pub(crate) struct TaskCell {
    pub(crate) header: Arc<TaskHeader>,
    sched: Weak<UserSched>,
    coroutine: Mutex<Option<TaskCoroutine>>,
    yielder: Arc<AtomicPtr<TaskYielder>>,
    wake_state: AtomicU8,
    /// Worker that last ran the task; woken tasks return there.
    home: AtomicUsize,
    started: AtomicBool,
}

pub(crate) struct UserSched {
    pub(crate) shared: Arc<Shared>,
    queues: WorkerQueues<Arc<TaskCell>>,
    sleeping: Vec<AtomicBool>,
    searching: AtomicUsize,
    threads: OnceLock<Vec<Thread>>,
    joins: Mutex<Vec<JoinHandle<()>>>,
    stacks: Mutex<Vec<DefaultStack>>,
    stop: AtomicBool,
}

struct SendStack(DefaultStack);
// SAFETY: a stack is plain memory; it is only reused after its coroutine is done.
unsafe impl Send for SendStack {}

const SPIN: Duration = Duration::from_micros(50);
const STACK_POOL: usize = 256;

impl UserSched {
    pub(crate) fn start(shared: Arc<Shared>) -> Arc<Self> {
        let workers = shared.config.workers;
        let sched = Arc::new(Self {
            shared,
            queues: WorkerQueues::new(workers),
            sleeping: (0..workers).map(|_| AtomicBool::new(false)).collect(),
            searching: AtomicUsize::new(0),
            threads: OnceLock::new(),
            joins: Mutex::new(Vec::new()),
            stacks: Mutex::new(Vec::new()),
            stop: AtomicBool::new(false),
        });
        let (tx, rx) = std::sync::mpsc::channel();
        let mut joins = Vec::with_capacity(workers);
        for w in 0..workers {
            let s = sched.clone();
            let tx = tx.clone();
            let h = thread::Builder::new()
                .name(format!("user-tasks-{w}"))
                .spawn(move || {
                    tx.send((w, thread::current())).ok();
                    drop(tx);
                    s.worker_loop(w);
                })
                .expect("failed to spawn worker thread");
            joins.push(h);
        }
        drop(tx);
        let mut threads: Vec<(usize, Thread)> = rx.iter().collect();
        threads.sort_by_key(|(w, _)| *w);
        let _ = sched
            .threads
            .set(threads.into_iter().map(|(_, t)| t).collect());
        *sched.joins.lock().unwrap() = joins;
        sched
    }

    pub(crate) fn submit(self: &Arc<Self>, job: Job, worker: usize) -> Result<usize, SpawnError> {
        let shared = &self.shared;
        let header = job.header;
        let yielder = Arc::new(AtomicPtr::new(ptr::null_mut()));
        let slot = yielder.clone();
        let run = job.run;
        let stack = self.take_stack()?;
        let co = Coroutine::with_stack(stack.0, move |y: &TaskYielder, ()| {
            slot.store(
                y as *const TaskYielder as *mut TaskYielder,
                Ordering::Release,
            );
            run()
        });
        let cell = Arc::new(TaskCell {
            header: header.clone(),
            sched: Arc::downgrade(self),
            coroutine: Mutex::new(Some(TaskCoroutine(co))),
            yielder,
            wake_state: AtomicU8::new(RUNNING),
            home: AtomicUsize::new(worker),
            started: AtomicBool::new(false),
        });
        let accepted =
            self.queues
                .queue(worker)
                .push_back_bounded(cell, shared.config.queue_capacity, || {
                    let ts = shared.event_time();
                    shared.emit_at(TaskEventKind::Created, &header, None, false, ts);
                    header.transition(TaskState::Ready);
                    shared.emit_at(TaskEventKind::Enqueued, &header, Some(worker), false, ts);
                    shared.stats[worker]
                        .enqueued
                        .fetch_add(1, Ordering::Relaxed);
                });
        match accepted {
            Ok(()) => {
                self.notify_push(worker);
                Ok(worker)
            }
            Err(cell) => {
                // Never started, so dropping the coroutine just drops the closure.
                drop(cell);
                Err(SpawnError::Backpressure {
                    worker,
                    capacity: shared.config.queue_capacity.unwrap_or(0),
                })
            }
        }
    }

    fn take_stack(&self) -> Result<SendStack, SpawnError> {
        if let Some(s) = self.stacks.lock().unwrap().pop() {
            return Ok(SendStack(s));
        }
        DefaultStack::new(self.shared.config.stack_size)
            .map(SendStack)
            .map_err(|e| {
                log::error!("task stack allocation failed: {e}");
                SpawnError::Rejected
            })
    }

    fn recycle_stack(&self, stack: DefaultStack) {
        let mut pool = self.stacks.lock().unwrap();
        if pool.len() < STACK_POOL {
            pool.push(stack);
        }
    }

    fn enqueue(&self, worker: usize, cell: Arc<TaskCell>) {
        self.queues.queue(worker).push_back(cell);
        self.notify_push(worker);
    }

    /// Makes sure someone will pick up work just pushed onto `worker`'s queue.
    fn notify_push(&self, worker: usize) {
        if self.sleeping[worker].load(Ordering::SeqCst) {
            self.unpark(worker);
            return;
        }
        self.wake_thief();
    }

    /// Wakes one sleeping worker to steal, unless someone is already looking.
    fn wake_thief(&self) {
        if !self.shared.config.steal_enabled || self.searching.load(Ordering::SeqCst) > 0 {
            return;
        }
        if let Some(w) = (0..self.sleeping.len()).find(|&w| self.sleeping[w].load(Ordering::SeqCst))
        {
            self.unpark(w);
        }
    }

    fn unpark(&self, worker: usize) {
        if let Some(t) = self.threads.get().and_then(|ts| ts.get(worker)) {
            t.unpark();
        }
    }

    fn has_work(&self, me: usize) -> bool {
        if !self.queues.queue(me).is_empty() {
            return true;
        }
        self.shared.config.steal_enabled && self.queues.total_len() > 0
    }

    fn find_task(&self, me: usize) -> Option<Arc<TaskCell>> {
        if let Some(t) = self.queues.queue(me).pop_front() {
            return Some(t);
        }
        if self.shared.config.steal_enabled {
            return self.queues.steal(me);
        }
        None
    }

    fn worker_loop(self: Arc<Self>, me: usize) {
        loop {
            if let Some(task) = self.find_task(me) {
                // More work is queued than this worker can take: recruit a thief.
                if !self.queues.queue(me).is_empty() {
                    self.wake_thief();
                }
                self.run_task(me, task);
                continue;
            }
            if self.stop.load(Ordering::SeqCst) {
                return;
            }
            self.idle(me);
        }
    }

    /// Spins briefly, then parks until new work may be available.
    fn idle(&self, me: usize) {
        self.searching.fetch_add(1, Ordering::SeqCst);
        let deadline = Instant::now() + SPIN;
        let mut found = false;
        while Instant::now() < deadline {
            if self.has_work(me) || self.stop.load(Ordering::SeqCst) {
                found = true;
                break;
            }
            std::hint::spin_loop();
        }
        self.searching.fetch_sub(1, Ordering::SeqCst);
        if found {
            return;
        }
        self.sleeping[me].store(true, Ordering::SeqCst);
        if !self.has_work(me) && !self.stop.load(Ordering::SeqCst) {
            thread::park();
        }
        self.sleeping[me].store(false, Ordering::SeqCst);
    }

    fn run_task(self: &Arc<Self>, me: usize, cell: Arc<TaskCell>) {
        let shared = &self.shared;
        let header = &cell.header;
        cell.home.store(me, Ordering::Relaxed);
        header.transition(TaskState::Running);
        let first = !cell.started.swap(true, Ordering::Relaxed);
        let kind = if first {
            TaskEventKind::Started
        } else {
            TaskEventKind::Resumed
        };
        let start = shared.clock.now_ns();
        shared.emit_at(kind, header, Some(me), false, start);

        let mut co = cell
            .coroutine
            .lock()
            .unwrap()
            .take()
            .expect("ready task without a coroutine");
        shared.stats[me].busy_begin(start);
        let prev = context::set_current(Some(Current::User {
            sched: self.clone(),
            worker: me,
            task: cell.clone(),
        }));
        let result = co.0.resume(());
        context::set_current(prev);
        let stop = shared.clock.now_ns();
        shared.stats[me].busy_end(stop);

        match result {
            CoroutineResult::Yield(Suspend::Yield) => {
                *cell.coroutine.lock().unwrap() = Some(co);
                header.transition(TaskState::Yielded);
                shared.emit_at(TaskEventKind::Yielded, header, Some(me), false, stop);
                header.transition(TaskState::Ready);
                self.enqueue(me, cell);
            }
            CoroutineResult::Yield(Suspend::Block) => {
                *cell.coroutine.lock().unwrap() = Some(co);
                header.transition(TaskState::Blocked);
                shared.emit_at(TaskEventKind::Yielded, header, Some(me), false, stop);
                if cell
                    .wake_state
                    .compare_exchange(RUNNING, PARKED, Ordering::AcqRel, Ordering::Acquire)
                    .is_err()
                {
                    // Woken before it finished suspending.
                    cell.wake_state.store(RUNNING, Ordering::Release);
                    header.transition(TaskState::Ready);
                    self.enqueue(me, cell);
                }
            }
            CoroutineResult::Return(outcome) => {
                self.recycle_stack(co.0.into_stack());
                header.transition(TaskState::Completed);
                shared.emit_at(
                    TaskEventKind::Stopped,
                    header,
                    Some(me),
                    outcome.failed,
                    stop,
                );
                (outcome.publish)();
                shared.task_finished(me, outcome.failed);
            }
        }
    }

    pub(crate) fn queue_lengths(&self) -> Vec<usize> {
        self.queues.lengths()
    }

    pub(crate) fn steals(&self) -> Vec<u64> {
        (0..self.queues.workers())
            .map(|w| self.queues.steals(w))
            .collect()
    }

    pub(crate) fn stop_and_join(&self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads.get().into_iter().flatten() {
            t.unpark();
        }
        for h in std::mem::take(&mut *self.joins.lock().unwrap()) {
            let _ = h.join();
        }
        self.stacks.lock().unwrap().clear();
    }
}

/// Makes a blocked task runnable again (or marks it notified if it has not
/// finished suspending yet).
pub(crate) fn wake(cell: Arc<TaskCell>) {
    let mut state = cell.wake_state.load(Ordering::Acquire);
    loop {
        let next = match state {
            PARKED => RUNNING,
            RUNNING => NOTIFIED,
            _ => return,
        };
        match cell
            .wake_state
            .compare_exchange(state, next, Ordering::AcqRel, Ordering::Acquire)
        {
            Ok(_) => break,
            Err(actual) => state = actual,
        }
    }
    if state == PARKED {
        cell.header.transition(TaskState::Ready);
        if let Some(sched) = cell.sched.upgrade() {
            let home = cell.home.load(Ordering::Relaxed);
            sched.enqueue(home, cell);
        }
    }
}

/// Suspends the user-level task running on this thread. No-op elsewhere.
pub(crate) fn suspend_current(reason: Suspend) {
    let cell = context::with_current(|c| match c {
        Some(Current::User { task, .. }) => Some(task.clone()),
        _ => None,
    });
    let Some(cell) = cell else { return };
    let yielder = cell.yielder.load(Ordering::Acquire);
    drop(cell);
    debug_assert!(!yielder.is_null());
    // SAFETY: the yielder lives on the running coroutine's stack for as long
    // as the coroutine exists, and we are executing inside that coroutine.
    unsafe { (*yielder).suspend(reason) };
}
