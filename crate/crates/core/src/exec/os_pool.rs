//! OS-thread pool backend.
//!
//! An array of worker slots, each with its own FIFO queue served by one OS
//! thread. Spawns are dispatched round-robin over the slots through a global
//! counter; there is no stealing, so work queued behind a busy thread waits
//! for that thread.
//!
//! Blocking inside a task parks the OS thread in the kernel. With blocking
//! handoff enabled the slot is handed to a replacement thread while its
//! server sleeps (only once the slot actually has queued work), so tasks
//! that wait on work queued behind them still make progress. The woken
//! thread finishes its task and then retires to a spare list.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};

use super::context::{self, Current};
use super::events::TaskEventKind;
use super::task::TaskState;
use super::{Job, Shared, SpawnError};

struct SlotState {
    queue: VecDeque<Job>,
    /// Bumped whenever the slot is handed to a new server thread.
    epoch: u64,
    server_blocked: bool,
    /// Servers waiting on the slot condvar; pushes only notify when nonzero.
    sleeping: u32,
    stop: bool,
}

struct Slot {
    state: Mutex<SlotState>,
    cv: Condvar,
    len: AtomicUsize,
}

enum Assignment {
    Serve { slot: usize, epoch: u64 },
    Stop,
}

struct Spare {
    assignment: Mutex<Option<Assignment>>,
    cv: Condvar,
}

pub(crate) struct OsPool {
    pub(crate) shared: Arc<Shared>,
    slots: Vec<Slot>,
    round_robin: AtomicU64,
    spares: Mutex<Vec<Arc<Spare>>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    threads_spawned: AtomicU64,
    stopping: AtomicBool,
    handoff: bool,
}

impl OsPool {
    pub(crate) fn start(shared: Arc<Shared>) -> Arc<Self> {
        let workers = shared.config.workers;
        let handoff = shared.config.blocking_handoff;
        let pool = Arc::new(Self {
            shared,
            slots: (0..workers)
                .map(|_| Slot {
                    state: Mutex::new(SlotState {
                        queue: VecDeque::new(),
                        epoch: 0,
                        server_blocked: false,
                        sleeping: 0,
                        stop: false,
                    }),
                    cv: Condvar::new(),
                    len: AtomicUsize::new(0),
                })
                .collect(),
            round_robin: AtomicU64::new(0),
            spares: Mutex::new(Vec::new()),
            threads: Mutex::new(Vec::new()),
            threads_spawned: AtomicU64::new(0),
            stopping: AtomicBool::new(false),
            handoff,
        });
        for slot in 0..workers {
            pool.spawn_server(slot, 0);
        }
        pool
    }

    fn spawn_server(self: &Arc<Self>, slot: usize, epoch: u64) {
        let pool = self.clone();
        let n = self.threads_spawned.fetch_add(1, Ordering::Relaxed);
        let handle = thread::Builder::new()
            .name(format!("os-pool-{n}"))
            .spawn(move || pool.serve(slot, epoch))
            .expect("failed to spawn os-pool thread");
        self.threads.lock().unwrap().push(handle);
    }

    pub(crate) fn submit(self: &Arc<Self>, job: Job) -> Result<usize, SpawnError> {
        let workers = self.slots.len();
        let index = (self.round_robin.fetch_add(1, Ordering::Relaxed) % workers as u64) as usize;
        let slot = &self.slots[index];
        let shared = &self.shared;
        let mut st = slot.state.lock().unwrap();
        if let Some(capacity) = shared.config.queue_capacity {
            if st.queue.len() >= capacity {
                return Err(SpawnError::Backpressure {
                    worker: index,
                    capacity,
                });
            }
        }
        let ts = shared.event_time();
        shared.emit_at(TaskEventKind::Created, &job.header, None, false, ts);
        job.header.transition(TaskState::Ready);
        shared.emit_at(TaskEventKind::Enqueued, &job.header, Some(index), false, ts);
        st.queue.push_back(job);
        slot.len.store(st.queue.len(), Ordering::Release);
        shared.stats[index].enqueued.fetch_add(1, Ordering::Relaxed);
        if st.server_blocked {
            self.hand_off(&mut st, index);
        } else if st.sleeping > 0 {
            // Notify after unlocking so the woken server does not block on
            // the lock this thread still holds.
            drop(st);
            slot.cv.notify_one();
        }
        Ok(index)
    }

    fn hand_off(self: &Arc<Self>, st: &mut SlotState, slot: usize) {
        st.epoch += 1;
        st.server_blocked = false;
        let epoch = st.epoch;
        let spare = self.spares.lock().unwrap().pop();
        match spare {
            Some(spare) => {
                *spare.assignment.lock().unwrap() = Some(Assignment::Serve { slot, epoch });
                spare.cv.notify_one();
            }
            None => self.spawn_server(slot, epoch),
        }
    }

    pub(crate) fn begin_blocking(self: &Arc<Self>, slot: usize, epoch: u64) {
        if !self.handoff {
            return;
        }
        let mut st = self.slots[slot].state.lock().unwrap();
        if st.epoch != epoch {
            return;
        }
        if st.queue.is_empty() {
            st.server_blocked = true;
        } else {
            self.hand_off(&mut st, slot);
        }
    }

    pub(crate) fn end_blocking(&self, slot: usize, epoch: u64) {
        if !self.handoff {
            return;
        }
        let mut st = self.slots[slot].state.lock().unwrap();
        if st.epoch == epoch {
            st.server_blocked = false;
        }
    }

    fn serve(self: Arc<Self>, mut slot: usize, mut epoch: u64) {
        loop {
            while let Some(job) = self.next_job(slot, epoch) {
                self.run_job(slot, epoch, job);
            }
            match self.wait_as_spare() {
                Some((s, e)) => {
                    slot = s;
                    epoch = e;
                }
                None => return,
            }
        }
    }

    /// Next job for the server of `slot`, or `None` once this thread no
    /// longer owns the slot or the pool is stopping.
    fn next_job(&self, slot: usize, epoch: u64) -> Option<Job> {
        let s = &self.slots[slot];
        let mut st = s.state.lock().unwrap();
        loop {
            if st.epoch != epoch {
                return None;
            }
            if let Some(job) = st.queue.pop_front() {
                s.len.store(st.queue.len(), Ordering::Release);
                return Some(job);
            }
            if st.stop {
                return None;
            }
            st.sleeping += 1;
            st = s.cv.wait(st).unwrap();
            st.sleeping -= 1;
        }
    }

    fn wait_as_spare(&self) -> Option<(usize, u64)> {
        let spare = Arc::new(Spare {
            assignment: Mutex::new(None),
            cv: Condvar::new(),
        });
        {
            let mut spares = self.spares.lock().unwrap();
            if self.stopping.load(Ordering::Acquire) {
                return None;
            }
            spares.push(spare.clone());
        }
        let mut assignment = spare.assignment.lock().unwrap();
        loop {
            match assignment.take() {
                Some(Assignment::Serve { slot, epoch }) => return Some((slot, epoch)),
                Some(Assignment::Stop) => return None,
                None => assignment = spare.cv.wait(assignment).unwrap(),
            }
        }
    }

    fn run_job(self: &Arc<Self>, slot: usize, epoch: u64, job: Job) {
        let shared = &self.shared;
        let header = job.header;
        header.transition(TaskState::Running);
        let start = shared.clock.now_ns();
        shared.emit_at(TaskEventKind::Started, &header, Some(slot), false, start);
        shared.stats[slot].busy_begin(start);
        let prev = context::set_current(Some(Current::Os {
            pool: self.clone(),
            slot,
            epoch,
            task: header.clone(),
        }));
        let outcome = (job.run)();
        context::set_current(prev);
        let stop = shared.clock.now_ns();
        shared.stats[slot].busy_end(stop);
        header.transition(TaskState::Completed);
        shared.emit_at(
            TaskEventKind::Stopped,
            &header,
            Some(slot),
            outcome.failed,
            stop,
        );
        (outcome.publish)();
        shared.task_finished(slot, outcome.failed);
    }

    pub(crate) fn queue_lengths(&self) -> Vec<usize> {
        self.slots
            .iter()
            .map(|s| s.len.load(Ordering::Acquire))
            .collect()
    }

    pub(crate) fn threads_spawned(&self) -> u64 {
        self.threads_spawned.load(Ordering::Relaxed)
    }

    pub(crate) fn stop_and_join(&self) {
        self.stopping.store(true, Ordering::Release);
        for slot in &self.slots {
            slot.state.lock().unwrap().stop = true;
            slot.cv.notify_all();
        }
        for spare in self.spares.lock().unwrap().drain(..) {
            *spare.assignment.lock().unwrap() = Some(Assignment::Stop);
            spare.cv.notify_one();
        }
        loop {
            let handles = std::mem::take(&mut *self.threads.lock().unwrap());
            if handles.is_empty() {
                break;
            }
            for h in handles {
                let _ = h.join();
            }
        }
    }
}
