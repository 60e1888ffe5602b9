use super::task::{Guid, Label};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskEventKind {
    Created,
    Enqueued,
    Started,
    /// The task gave up its worker, either through `yield_now` or by
    /// blocking cooperatively on a future or synchronization primitive.
    Yielded,
    Resumed,
    Stopped,
    /// Entry into a nested annotated scope; `annotation` is the scope label.
    ScopeEnter,
    ScopeExit,
    /// Misuse that the runtime tolerated (e.g. `yield_now` outside a task).
    Warning,
}

/// Task lifecycle notification delivered to [`TaskListener`]s.
#[derive(Clone, Copy, Debug)]
pub struct TaskEvent<'a> {
    pub kind: TaskEventKind,
    pub guid: Guid,
    pub parent_guid: Guid,
    pub annotation: &'a Label,
    /// Worker index the event happened on; `None` for callers outside the pool.
    pub worker: Option<usize>,
    pub timestamp_ns: u64,
    /// Set on `Stopped` when the task body panicked.
    pub failed: bool,
}

/// Receives task events. Called concurrently from worker threads, so
/// implementations must keep critical sections short.
pub trait TaskListener: Send + Sync {
    fn on_event(&self, event: &TaskEvent<'_>);
}
