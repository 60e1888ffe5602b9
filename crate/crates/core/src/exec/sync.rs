//! Task-aware mutex and condition variable.
//!
//! Inside a user-level task, waiting suspends only the task and the worker
//! moves on. On the OS pool and on plain threads, waiting parks the OS
//! thread in the kernel.

use std::cell::{Cell, UnsafeCell};
use std::collections::VecDeque;
use std::fmt;
use std::ops::{Deref, DerefMut};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use super::context::{self, Blocker, Waiter};

/// Lock owner identity: the task guid inside a task (tasks can migrate
/// between threads), a per-thread token elsewhere.
fn owner_token() -> u64 {
    const THREAD_BIT: u64 = 1 << 63;
    static NEXT: AtomicU64 = AtomicU64::new(1);
    thread_local! {
        static TOKEN: Cell<u64> = const { Cell::new(0) };
    }
    if let Some(guid) = context::current_guid() {
        return guid;
    }
    TOKEN.with(|t| {
        if t.get() == 0 {
            t.set(THREAD_BIT | NEXT.fetch_add(1, Ordering::Relaxed));
        }
        t.get()
    })
}

struct RawState {
    owner: Option<u64>,
    waiters: VecDeque<Waiter>,
}

/// Mutex without data. Unlocking from a non-owner and recursive locking
/// are programming errors and panic.
pub struct RawTaskMutex {
    state: Mutex<RawState>,
}

impl RawTaskMutex {
    pub fn new() -> Self {
        Self {
            state: Mutex::new(RawState {
                owner: None,
                waiters: VecDeque::new(),
            }),
        }
    }

    pub fn lock(&self) {
        let me = owner_token();
        loop {
            let blocker = {
                let mut st = self.state.lock().unwrap();
                match st.owner {
                    None => {
                        st.owner = Some(me);
                        return;
                    }
                    Some(o) => assert_ne!(o, me, "TaskMutex locked recursively"),
                }
                let blocker = Blocker::for_current();
                st.waiters.push_back(blocker.waiter());
                blocker
            };
            blocker.block(false);
        }
    }

    pub fn try_lock(&self) -> bool {
        let mut st = self.state.lock().unwrap();
        if st.owner.is_none() {
            st.owner = Some(owner_token());
            true
        } else {
            false
        }
    }

    pub fn unlock(&self) {
        let waiter = {
            let mut st = self.state.lock().unwrap();
            assert_eq!(
                st.owner,
                Some(owner_token()),
                "TaskMutex unlocked by a non-owner"
            );
            st.owner = None;
            st.waiters.pop_front()
        };
        if let Some(w) = waiter {
            w.wake();
        }
    }

    pub fn is_locked(&self) -> bool {
        self.state.lock().unwrap().owner.is_some()
    }

    fn held_by_caller(&self) -> bool {
        self.state.lock().unwrap().owner == Some(owner_token())
    }
}

impl Default for RawTaskMutex {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for RawTaskMutex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RawTaskMutex")
            .field("locked", &self.is_locked())
            .finish()
    }
}

pub struct TaskMutex<T> {
    raw: RawTaskMutex,
    data: UnsafeCell<T>,
}

// SAFETY: access to `data` is serialized by `raw`.
unsafe impl<T: Send> Send for TaskMutex<T> {}
unsafe impl<T: Send> Sync for TaskMutex<T> {}

impl<T> TaskMutex<T> {
    pub fn new(value: T) -> Self {
        Self {
            raw: RawTaskMutex::new(),
            data: UnsafeCell::new(value),
        }
    }

    pub fn lock(&self) -> TaskMutexGuard<'_, T> {
        self.raw.lock();
        TaskMutexGuard { mutex: self }
    }

    pub fn try_lock(&self) -> Option<TaskMutexGuard<'_, T>> {
        self.raw
            .try_lock()
            .then_some(TaskMutexGuard { mutex: self })
    }

    pub fn raw(&self) -> &RawTaskMutex {
        &self.raw
    }

    pub fn into_inner(self) -> T {
        self.data.into_inner()
    }

    pub fn get_mut(&mut self) -> &mut T {
        self.data.get_mut()
    }
}

impl<T: Default> Default for TaskMutex<T> {
    fn default() -> Self {
        Self::new(T::default())
    }
}

impl<T> fmt::Debug for TaskMutex<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TaskMutex")
            .field("locked", &self.raw.is_locked())
            .finish_non_exhaustive()
    }
}

#[must_use = "the lock is released when the guard is dropped"]
pub struct TaskMutexGuard<'a, T> {
    mutex: &'a TaskMutex<T>,
}

// SAFETY: the guard only hands out references to `T`; ownership is tracked
// by task, so releasing it from another thread is fine.
unsafe impl<T: Sync> Sync for TaskMutexGuard<'_, T> {}

impl<T> Deref for TaskMutexGuard<'_, T> {
    type Target = T;
    fn deref(&self) -> &T {
        // SAFETY: the guard proves the lock is held.
        unsafe { &*self.mutex.data.get() }
    }
}

impl<T> DerefMut for TaskMutexGuard<'_, T> {
    fn deref_mut(&mut self) -> &mut T {
        // SAFETY: the guard proves the lock is held.
        unsafe { &mut *self.mutex.data.get() }
    }
}

impl<T> Drop for TaskMutexGuard<'_, T> {
    fn drop(&mut self) {
        self.mutex.raw.unlock();
    }
}

/// Condition variable for [`TaskMutex`]. Spurious wakeups are possible, so
/// waits belong in a predicate loop (or use [`TaskCondvar::wait_while`]).
#[derive(Default)]
pub struct TaskCondvar {
    waiters: Mutex<VecDeque<Waiter>>,
}

impl TaskCondvar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn wait<'a, T>(&self, guard: TaskMutexGuard<'a, T>) -> TaskMutexGuard<'a, T> {
        let mutex = guard.mutex;
        std::mem::forget(guard);
        self.wait_raw(&mutex.raw);
        TaskMutexGuard { mutex }
    }

    pub fn wait_while<'a, T>(
        &self,
        mut guard: TaskMutexGuard<'a, T>,
        mut condition: impl FnMut(&mut T) -> bool,
    ) -> TaskMutexGuard<'a, T> {
        while condition(&mut guard) {
            guard = self.wait(guard);
        }
        guard
    }

    /// Atomically releases `mutex`, waits for a notification, and reacquires
    /// it before returning.
    ///
    /// # Panics
    /// If the caller does not hold `mutex`.
    pub fn wait_raw(&self, mutex: &RawTaskMutex) {
        assert!(
            mutex.held_by_caller(),
            "TaskCondvar::wait without holding the mutex"
        );
        let blocker = Blocker::for_current();
        self.waiters.lock().unwrap().push_back(blocker.waiter());
        mutex.unlock();
        blocker.block(true);
        mutex.lock();
    }

    pub fn notify_one(&self) {
        let w = self.waiters.lock().unwrap().pop_front();
        if let Some(w) = w {
            w.wake();
        }
    }

    pub fn notify_all(&self) {
        let all = std::mem::take(&mut *self.waiters.lock().unwrap());
        for w in all {
            w.wake();
        }
    }
}

impl fmt::Debug for TaskCondvar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TaskCondvar").finish_non_exhaustive()
    }
}
