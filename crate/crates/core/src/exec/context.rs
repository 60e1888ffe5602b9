//! Per-thread record of the task currently executing, and the blocking
//! machinery that turns "wait" into either a kernel-level park (plain
//! threads, OS-pool tasks) or a cooperative suspension (user-level tasks).

use std::cell::RefCell;
use std::sync::{Arc, Condvar, Mutex};

use super::events::TaskEventKind;
use super::os_pool::OsPool;
use super::task::{Guid, Label, TaskHeader};
use super::user_tasks::{self, Suspend, TaskCell, UserSched};
use super::Shared;

pub(crate) enum Current {
    Os {
        pool: Arc<OsPool>,
        slot: usize,
        epoch: u64,
        task: Arc<TaskHeader>,
    },
    User {
        sched: Arc<UserSched>,
        worker: usize,
        task: Arc<TaskCell>,
    },
}

impl Current {
    pub(crate) fn shared(&self) -> &Arc<Shared> {
        match self {
            Current::Os { pool, .. } => &pool.shared,
            Current::User { sched, .. } => &sched.shared,
        }
    }

    pub(crate) fn header(&self) -> &TaskHeader {
        match self {
            Current::Os { task, .. } => task,
            Current::User { task, .. } => &task.header,
        }
    }

    pub(crate) fn worker(&self) -> usize {
        match self {
            Current::Os { slot, .. } => *slot,
            Current::User { worker, .. } => *worker,
        }
    }
}

thread_local! {
    static CURRENT: RefCell<Option<Current>> = const { RefCell::new(None) };
}

// Tasks on the user-level backend can migrate between OS threads across a
// suspension, so thread-local accesses must not be inlined into code that
// spans a suspension point.
#[inline(never)]
pub(crate) fn set_current(next: Option<Current>) -> Option<Current> {
    CURRENT.with(|c| c.replace(next))
}

#[inline(never)]
pub(crate) fn with_current<R>(f: impl FnOnce(Option<&Current>) -> R) -> R {
    CURRENT.with(|c| f(c.borrow().as_ref()))
}

pub(crate) fn current_guid() -> Option<Guid> {
    with_current(|c| c.map(|c| c.header().guid))
}

pub(crate) fn current_header() -> Option<Arc<TaskHeader>> {
    with_current(|c| {
        c.map(|c| match c {
            Current::Os { task, .. } => task.clone(),
            Current::User { task, .. } => task.header.clone(),
        })
    })
}

/// Worker index of the calling thread if it is running a task of the
/// executor identified by `exec_id`.
pub(crate) fn current_worker_of(exec_id: u64) -> Option<usize> {
    with_current(|c| c.filter(|c| c.shared().id == exec_id).map(Current::worker))
}

/// Kernel-level parking spot for one blocked thread.
pub(crate) struct ThreadParker {
    woken: Mutex<bool>,
    cv: Condvar,
}

impl ThreadParker {
    fn new() -> Self {
        Self {
            woken: Mutex::new(false),
            cv: Condvar::new(),
        }
    }

    fn park(&self) {
        let mut woken = self.woken.lock().unwrap();
        while !*woken {
            woken = self.cv.wait(woken).unwrap();
        }
    }

    fn unpark(&self) {
        *self.woken.lock().unwrap() = true;
        self.cv.notify_one();
    }
}

/// Registration left in a wait list; waking it makes the blocked party
/// runnable again.
pub(crate) enum Waiter {
    Task(Arc<TaskCell>),
    Thread(Arc<ThreadParker>),
}

impl Waiter {
    pub(crate) fn wake(self) {
        match self {
            Waiter::Task(cell) => user_tasks::wake(cell),
            Waiter::Thread(parker) => parker.unpark(),
        }
    }
}

/// The calling context's way of blocking. Register [`Blocker::waiter`] in a
/// wait list under the primitive's lock, release the lock, then call
/// [`Blocker::block`].
pub(crate) enum Blocker {
    Task(Arc<TaskCell>),
    Thread {
        parker: Arc<ThreadParker>,
        os: Option<(Arc<OsPool>, usize, u64)>,
    },
}

impl Blocker {
    pub(crate) fn for_current() -> Self {
        with_current(|c| match c {
            Some(Current::User { task, .. }) => Blocker::Task(task.clone()),
            Some(Current::Os {
                pool, slot, epoch, ..
            }) => Blocker::Thread {
                parker: Arc::new(ThreadParker::new()),
                os: Some((pool.clone(), *slot, *epoch)),
            },
            None => Blocker::Thread {
                parker: Arc::new(ThreadParker::new()),
                os: None,
            },
        })
    }

    pub(crate) fn waiter(&self) -> Waiter {
        match self {
            Blocker::Task(cell) => Waiter::Task(cell.clone()),
            Blocker::Thread { parker, .. } => Waiter::Thread(parker.clone()),
        }
    }

    /// Blocks until the registered waiter is woken. `handoff` lets an OS-pool
    /// worker hand its queue to a replacement thread while it sleeps.
    pub(crate) fn block(self, handoff: bool) {
        match self {
            Blocker::Task(_) => user_tasks::suspend_current(Suspend::Block),
            Blocker::Thread { parker, os } => match os.filter(|_| handoff) {
                Some((pool, slot, epoch)) => {
                    pool.begin_blocking(slot, epoch);
                    parker.park();
                    pool.end_blocking(slot, epoch);
                }
                None => parker.park(),
            },
        }
    }
}

/// Emits scope enter/exit events for a nested annotated region of the
/// current task. Inert outside tasks.
pub(crate) struct ScopeGuard {
    label: Option<Label>,
}

impl ScopeGuard {
    pub(crate) fn enter(label: &Label) -> Self {
        let inside = with_current(|c| match c {
            Some(cur) => {
                emit_for_current(cur, TaskEventKind::ScopeEnter, label);
                true
            }
            None => false,
        });
        Self {
            label: inside.then(|| label.clone()),
        }
    }
}

impl Drop for ScopeGuard {
    fn drop(&mut self) {
        if let Some(label) = self.label.take() {
            with_current(|c| {
                if let Some(cur) = c {
                    emit_for_current(cur, TaskEventKind::ScopeExit, &label);
                }
            });
        }
    }
}

fn emit_for_current(cur: &Current, kind: TaskEventKind, label: &Label) {
    let header = cur.header();
    cur.shared().emit_raw(
        kind,
        header.guid,
        header.parent,
        label,
        Some(cur.worker()),
        false,
    );
}
