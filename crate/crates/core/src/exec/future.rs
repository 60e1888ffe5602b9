use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use super::context::{Blocker, Waiter};
use super::task::{Guid, TaskInfo};
use super::TaskError;

struct Slot<T> {
    result: Option<Result<T, TaskError>>,
    waiters: Vec<Waiter>,
}

/// Single-assignment result cell shared by a task and its [`FutureHandle`].
pub(crate) struct Completion<T> {
    done: AtomicBool,
    slot: Mutex<Slot<T>>,
}

impl<T> Completion<T> {
    pub(crate) fn new() -> Self {
        Self {
            done: AtomicBool::new(false),
            slot: Mutex::new(Slot {
                result: None,
                waiters: Vec::new(),
            }),
        }
    }

    pub(crate) fn complete(&self, result: Result<T, TaskError>) {
        let waiters = {
            let mut slot = self.slot.lock().unwrap();
            debug_assert!(slot.result.is_none(), "future completed twice");
            slot.result = Some(result);
            self.done.store(true, Ordering::Release);
            std::mem::take(&mut slot.waiters)
        };
        for w in waiters {
            w.wake();
        }
    }
}

/// Completion handle for a spawned task.
///
/// Waiting from inside a user-level task suspends only that task; its worker
/// moves on to other ready work. Everywhere else the calling OS thread blocks.
pub struct FutureHandle<T> {
    completion: Arc<Completion<T>>,
    info: TaskInfo,
}

impl<T> FutureHandle<T> {
    pub(crate) fn new(completion: Arc<Completion<T>>, info: TaskInfo) -> Self {
        Self { completion, info }
    }

    pub fn guid(&self) -> Guid {
        self.info.guid()
    }

    pub fn task(&self) -> &TaskInfo {
        &self.info
    }

    pub fn is_ready(&self) -> bool {
        self.completion.done.load(Ordering::Acquire)
    }

    /// Returns the task's result, blocking (or yielding) until it is available.
    ///
    /// A task waiting on a future that can only complete once the waiter's own
    /// worker is free deadlocks on an OS pool without blocking handoff.
    pub fn wait(self) -> Result<T, TaskError> {
        if self.is_ready() {
            // Completed-future fast path: no scheduler interaction.
            return self.take();
        }
        loop {
            let blocker = Blocker::for_current();
            {
                let mut slot = self.completion.slot.lock().unwrap();
                if let Some(result) = slot.result.take() {
                    return result;
                }
                slot.waiters.push(blocker.waiter());
            }
            blocker.block(true);
            if self.is_ready() {
                return self.take();
            }
        }
    }

    fn take(&self) -> Result<T, TaskError> {
        self.completion
            .slot
            .lock()
            .unwrap()
            .result
            .take()
            .expect("completed future has no result")
    }
}

impl<T> std::fmt::Debug for FutureHandle<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FutureHandle")
            .field("task", &self.info)
            .field("ready", &self.is_ready())
            .finish()
    }
}
