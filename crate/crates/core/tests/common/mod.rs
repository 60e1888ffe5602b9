#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use taskbench_core::exec::{Guid, TaskEvent, TaskEventKind, TaskListener};
use taskbench_core::{Backend, Executor, ExecutorConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct Recorded {
    pub kind: TaskEventKind,
    pub guid: Guid,
    pub parent: Guid,
    pub annotation: String,
    pub worker: Option<usize>,
    pub ts: u64,
}

#[derive(Default)]
pub struct Recorder {
    pub events: Mutex<Vec<Recorded>>,
}

impl TaskListener for Recorder {
    fn on_event(&self, e: &TaskEvent<'_>) {
        self.events.lock().unwrap().push(Recorded {
            kind: e.kind,
            guid: e.guid,
            parent: e.parent_guid,
            annotation: e.annotation.to_string(),
            worker: e.worker,
            ts: e.timestamp_ns,
        });
    }
}

impl Recorder {
    pub fn snapshot(&self) -> Vec<Recorded> {
        self.events.lock().unwrap().clone()
    }

    pub fn count(&self, kind: TaskEventKind) -> usize {
        self.events
            .lock()
            .unwrap()
            .iter()
            .filter(|e| e.kind == kind)
            .count()
    }

    pub fn count_for(&self, kind: TaskEventKind, guid: Guid) -> usize {
        self.events
            .lock()
            .unwrap()
            .iter()
            .filter(|e| e.kind == kind && e.guid == guid)
            .count()
    }
}

pub fn recorded_executor(config: ExecutorConfig) -> (Executor, Arc<Recorder>) {
    let mut exec = Executor::new(config).unwrap();
    let rec = Arc::new(Recorder::default());
    exec.attach_listener(rec.clone()).unwrap();
    (exec, rec)
}

pub fn all_configs(workers: &[usize]) -> Vec<ExecutorConfig> {
    let mut out = Vec::new();
    for backend in Backend::ALL {
        for &w in workers {
            out.push(ExecutorConfig::new(backend, w));
        }
    }
    out
}
