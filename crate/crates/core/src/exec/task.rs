//! Task identity, lifecycle state and task bodies.

use std::any::type_name;
use std::borrow::Borrow;
use std::fmt;
use std::ops::Deref;
use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::context;

/// Globally unique task identifier. `0` is reserved for "no parent".
pub type Guid = u64;

pub const ROOT_GUID: Guid = 0;

static NEXT_GUID: AtomicU64 = AtomicU64::new(1);

pub(crate) fn next_guid() -> Guid {
    NEXT_GUID.fetch_add(1, Ordering::Relaxed)
}

/// Lifecycle of a task.
///
/// `Created -> Ready -> Running -> {Yielded | Blocked -> Ready -> Running}* -> Completed`
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum TaskState {
    Created = 0,
    Ready = 1,
    Running = 2,
    Yielded = 3,
    Blocked = 4,
    Completed = 5,
}

impl TaskState {
    fn from_u8(v: u8) -> Self {
        match v {
            0 => TaskState::Created,
            1 => TaskState::Ready,
            2 => TaskState::Running,
            3 => TaskState::Yielded,
            4 => TaskState::Blocked,
            _ => TaskState::Completed,
        }
    }

    pub fn can_transition_to(self, next: TaskState) -> bool {
        use TaskState::*;
        matches!(
            (self, next),
            (Created, Ready)
                | (Ready, Running)
                | (Running, Yielded)
                | (Running, Blocked)
                | (Running, Completed)
                | (Yielded, Ready)
                | (Blocked, Ready)
        )
    }
}

/// Task label. Cheap to clone; closures spawned without an explicit
/// annotation get their type name.
#[derive(Clone)]
pub enum Label {
    Static(&'static str),
    Shared(Arc<str>),
}

impl Label {
    pub fn as_str(&self) -> &str {
        match self {
            Label::Static(s) => s,
            Label::Shared(s) => s,
        }
    }
}

impl Deref for Label {
    type Target = str;
    fn deref(&self) -> &str {
        self.as_str()
    }
}

impl Borrow<str> for Label {
    fn borrow(&self) -> &str {
        self.as_str()
    }
}

impl fmt::Debug for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self.as_str(), f)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl PartialEq for Label {
    fn eq(&self, other: &Self) -> bool {
        self.as_str() == other.as_str()
    }
}

impl From<&'static str> for Label {
    fn from(s: &'static str) -> Self {
        Label::Static(s)
    }
}

impl From<String> for Label {
    fn from(s: String) -> Self {
        Label::Shared(s.into())
    }
}

impl From<Arc<str>> for Label {
    fn from(s: Arc<str>) -> Self {
        Label::Shared(s)
    }
}

/// Runtime-owned task header shared by both backends.
pub(crate) struct TaskHeader {
    pub(crate) guid: Guid,
    pub(crate) parent: Guid,
    pub(crate) label: Label,
    state: AtomicU8,
}

impl TaskHeader {
    pub(crate) fn new(guid: Guid, parent: Guid, label: Label) -> Self {
        Self {
            guid,
            parent,
            label,
            state: AtomicU8::new(TaskState::Created as u8),
        }
    }

    pub(crate) fn state(&self) -> TaskState {
        TaskState::from_u8(self.state.load(Ordering::Acquire))
    }

    pub(crate) fn transition(&self, next: TaskState) {
        let prev = TaskState::from_u8(self.state.swap(next as u8, Ordering::AcqRel));
        debug_assert!(
            prev.can_transition_to(next),
            "illegal task transition {prev:?} -> {next:?} (guid {})",
            self.guid
        );
    }
}

/// Read-only view of a spawned task.
#[derive(Clone)]
pub struct TaskInfo(pub(crate) Arc<TaskHeader>);

impl TaskInfo {
    pub fn guid(&self) -> Guid {
        self.0.guid
    }

    pub fn parent_guid(&self) -> Guid {
        self.0.parent
    }

    pub fn annotation(&self) -> &str {
        self.0.label.as_str()
    }

    pub fn state(&self) -> TaskState {
        self.0.state()
    }

    pub fn descriptor(&self) -> TaskDescriptor {
        TaskDescriptor {
            guid: self.guid(),
            parent_guid: self.parent_guid(),
            annotation: self.annotation().to_owned(),
            state: self.state(),
        }
    }
}

impl fmt::Debug for TaskInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TaskInfo")
            .field("guid", &self.guid())
            .field("parent_guid", &self.parent_guid())
            .field("annotation", &self.annotation())
            .field("state", &self.state())
            .finish()
    }
}

/// Point-in-time snapshot of a task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub guid: Guid,
    pub parent_guid: Guid,
    pub annotation: String,
    pub state: TaskState,
}

/// Something an executor can run as a task.
///
/// Implemented for every `FnOnce() -> R` closure (labelled with the closure's
/// type name) and for [`Annotated`] wrappers.
pub trait TaskBody: Send + 'static {
    type Output: Send + 'static;

    fn label(&self) -> Label;

    fn run(self) -> Self::Output;
}

impl<F, R> TaskBody for F
where
    F: FnOnce() -> R + Send + 'static,
    R: Send + 'static,
{
    type Output = R;

    fn label(&self) -> Label {
        Label::Static(type_name::<F>())
    }

    fn run(self) -> R {
        self()
    }
}

/// A callable carrying an explicit annotation.
///
/// Spawned as a task, the task's timer carries the annotation. Invoked with
/// [`Annotated::call`] inside a running task, it opens a nested timer scope
/// whose time is subtracted from the enclosing scope's exclusive time.
pub struct Annotated<F> {
    label: Label,
    work: F,
}

/// Wraps `work` with an annotation. `name` must not be empty.
pub fn annotated<F>(name: impl Into<Label>, work: F) -> Annotated<F> {
    let label = name.into();
    assert!(!label.is_empty(), "annotation must not be empty");
    Annotated { label, work }
}

impl<F, R> Annotated<F>
where
    F: FnOnce() -> R,
{
    pub fn annotation(&self) -> &str {
        &self.label
    }

    /// Runs the callable as a nested annotated scope of the current task.
    /// Outside a task it simply runs the callable.
    pub fn call(self) -> R {
        let scope = context::ScopeGuard::enter(&self.label);
        let out = (self.work)();
        drop(scope);
        out
    }
}

impl<F, R> TaskBody for Annotated<F>
where
    F: FnOnce() -> R + Send + 'static,
    R: Send + 'static,
{
    type Output = R;

    fn label(&self) -> Label {
        self.label.clone()
    }

    fn run(self) -> R {
        (self.work)()
    }
}
