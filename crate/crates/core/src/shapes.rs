//! Synthetic task graphs for stress tests and benchmarks.
//!
//! A shape is a forest: `roots` root tasks, each spawning `fanout` children
//! per level down to `depth`. Every task optionally yields, bumps a shared
//! [`TaskMutex`] counter, then waits for its children. Each task records
//! its own execution so callers can check exactly-once semantics.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::exec::{
    annotated, ExecError, ExecHandle, ExecutionSummary, Executor, ExecutorConfig, Guid, TaskEvent,
    TaskEventKind, TaskListener, TaskMutex,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskShape {
    pub roots: usize,
    pub depth: u32,
    pub fanout: usize,
    /// `yield_now` calls per task.
    pub yields: u32,
    /// Whether every task increments a shared mutex-protected counter.
    pub lock: bool,
}

impl TaskShape {
    pub fn tasks(&self) -> u64 {
        let mut per_root = 0u64;
        let mut level = 1u64;
        for _ in 0..=self.depth {
            per_root += level;
            level *= self.fanout as u64;
        }
        per_root * self.roots as u64
    }

    /// Ten shapes spanning flat, deep, wide, yielding and locking graphs.
    pub fn suite() -> Vec<TaskShape> {
        let s = |roots, depth, fanout, yields, lock| TaskShape {
            roots,
            depth,
            fanout,
            yields,
            lock,
        };
        vec![
            s(1, 0, 0, 0, false),
            s(500, 0, 0, 0, false),
            s(200, 0, 0, 3, false),
            s(100, 0, 0, 0, true),
            s(1, 5, 2, 0, false),
            s(4, 2, 8, 0, false),
            s(8, 3, 3, 1, false),
            s(16, 2, 4, 2, true),
            s(2, 1, 100, 0, true),
            s(32, 1, 5, 1, true),
        ]
    }
}

struct Ctx {
    exec: ExecHandle,
    shape: TaskShape,
    next_id: AtomicU64,
    executions: Vec<AtomicU32>,
    counter: TaskMutex<u64>,
}

fn node(ctx: Arc<Ctx>, id: u64, level: u32) {
    ctx.executions[id as usize].fetch_add(1, Ordering::SeqCst);
    for _ in 0..ctx.shape.yields {
        crate::exec::yield_now();
    }
    if ctx.shape.lock {
        *ctx.counter.lock() += 1;
    }
    if level < ctx.shape.depth {
        let kids: Vec<_> = (0..ctx.shape.fanout)
            .map(|_| spawn_node(&ctx, level + 1))
            .collect();
        for k in kids {
            k.wait().expect("child task failed");
        }
    }
}

fn spawn_node(ctx: &Arc<Ctx>, level: u32) -> crate::exec::FutureHandle<()> {
    let id = ctx.next_id.fetch_add(1, Ordering::SeqCst);
    let c = ctx.clone();
    ctx.exec
        .spawn(annotated("node", move || node(c, id, level)))
        .expect("spawn rejected")
}

#[derive(Clone, Debug)]
pub struct ShapeRun {
    pub expected: u64,
    /// Executions per logical task; all ones when exactly-once holds.
    pub executions: Vec<u32>,
    pub counter: u64,
    pub summary: ExecutionSummary,
}

impl ShapeRun {
    pub fn exactly_once(&self) -> bool {
        self.executions.len() as u64 == self.expected
            && self.executions.iter().all(|&n| n == 1)
            && self.summary.tasks_spawned == self.expected
            && self.summary.tasks_completed == self.expected
            && self.summary.tasks_failed == 0
    }
}

/// Runs `shape` on a fresh executor and waits for every task.
pub fn run_shape(
    config: ExecutorConfig,
    shape: &TaskShape,
    listeners: &[Arc<dyn TaskListener>],
) -> Result<ShapeRun, ExecError> {
    let expected = shape.tasks();
    let mut exec = Executor::new(config)?;
    for l in listeners {
        exec.attach_listener(l.clone())?;
    }
    let handle = exec.start()?;
    let ctx = Arc::new(Ctx {
        exec: handle,
        shape: shape.clone(),
        next_id: AtomicU64::new(0),
        executions: (0..expected).map(|_| AtomicU32::new(0)).collect(),
        counter: TaskMutex::new(0),
    });
    let roots: Vec<_> = (0..shape.roots).map(|_| spawn_node(&ctx, 0)).collect();
    for r in roots {
        r.wait().expect("root task failed");
    }
    let summary = exec.shutdown();
    let executions = ctx
        .executions
        .iter()
        .map(|a| a.load(Ordering::SeqCst))
        .collect();
    let counter = *ctx.counter.lock();
    Ok(ShapeRun {
        expected,
        executions,
        counter,
        summary,
    })
}

/// Checks that each task's events follow
/// created, enqueued, started, (yielded, resumed)*, stopped.
#[derive(Default)]
pub struct OrderChecker {
    state: Mutex<HashMap<Guid, TaskEventKind>>,
    violations: Mutex<Vec<String>>,
}

impl OrderChecker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn violations(&self) -> Vec<String> {
        self.violations.lock().unwrap().clone()
    }

    /// Tasks whose last event is not `Stopped`.
    pub fn unfinished(&self) -> usize {
        self.state
            .lock()
            .unwrap()
            .values()
            .filter(|&&k| k != TaskEventKind::Stopped)
            .count()
    }
}

impl TaskListener for OrderChecker {
    fn on_event(&self, e: &TaskEvent<'_>) {
        use TaskEventKind::*;
        if matches!(e.kind, ScopeEnter | ScopeExit | Warning) {
            return;
        }
        let mut state = self.state.lock().unwrap();
        let prev = state.get(&e.guid).copied();
        let ok = matches!(
            (prev, e.kind),
            (None, Created)
                | (Some(Created), Enqueued)
                | (Some(Enqueued), Started)
                | (Some(Started | Resumed), Yielded | Stopped)
                | (Some(Yielded), Resumed)
        );
        if !ok {
            self.violations
                .lock()
                .unwrap()
                .push(format!("task {}: {:?} after {:?}", e.guid, e.kind, prev));
        }
        state.insert(e.guid, e.kind);
    }
}
