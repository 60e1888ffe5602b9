use std::fs;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde_json::Value;
use taskbench_core::ising::{run_workload, NullSink, WorkloadConfig};
use taskbench_core::measure::{builtin_sources, CounterSelect, Profiler, SamplerBuilder};
use taskbench_core::trace::{
    export_timeline, read_trace, validate, write_trace, CounterRecord, MetaRecord, TaskRecord,
    TraceRecord, TraceWriter,
};
use taskbench_core::{annotated, Backend, Executor, ExecutorConfig};

fn meta(backend: Backend, workers: usize) -> MetaRecord {
    MetaRecord::new(
        backend.as_str(),
        workers,
        7,
        serde_json::json!({"lattice": 4}),
    )
}

/// Runs `body` on an instrumented executor whose timers and counter samples
/// stream into a trace at `path`.
fn traced_run(
    path: &std::path::Path,
    backend: Backend,
    workers: usize,
    body: impl FnOnce(&taskbench_core::ExecHandle),
) {
    let writer = TraceWriter::create(path, meta(backend, workers)).unwrap();
    let mut exec = Executor::new(ExecutorConfig::new(backend, workers)).unwrap();
    let tx = writer.sender();
    let prof = Arc::new(Profiler::new().with_sink(move |t| tx.task(TaskRecord::from(t))));
    exec.attach_listener(prof.clone()).unwrap();
    let h = exec.start().unwrap();
    let tx = writer.sender();
    let sampler = SamplerBuilder::new(Duration::from_millis(2), h.clock())
        .sources(builtin_sources(&CounterSelect::ALL, Some(&h)))
        .sink(move |s, kind| tx.counter(CounterRecord::from_sample(s, kind)))
        .start()
        .unwrap();
    body(&h);
    exec.shutdown();
    drop(sampler.stop());
    drop(h);
    drop(exec);
    drop(prof);
    let stats = writer.finish();
    assert_eq!(stats.error, None);
}

#[test]
fn zero_task_run_has_only_meta() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    TraceWriter::create(&path, meta(Backend::OsPool, 1))
        .unwrap()
        .finish();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1);
    let t = read_trace(&path).unwrap();
    assert!(t.tasks.is_empty() && t.counters.is_empty());
    assert!(validate(&t).is_valid());
}

#[test]
fn ten_task_run_closes_lineage() {
    for backend in Backend::ALL {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        traced_run(&path, backend, 2, |h| {
            let h2 = h.clone();
            let root = h
                .spawn(annotated("root", move || {
                    let kids: Vec<_> = (0..9)
                        .map(|i| h2.spawn(annotated("child", move || i)).unwrap())
                        .collect();
                    kids.into_iter().map(|k| k.wait().unwrap()).sum::<i32>()
                }))
                .unwrap();
            assert_eq!(root.wait().unwrap(), 36);
        });
        let t = read_trace(&path).unwrap();
        assert_eq!(t.tasks.len(), 10);
        assert_eq!(t.discarded_lines, 0);
        let root = t.tasks.iter().find(|r| r.annotation == "root").unwrap();
        assert!(t
            .tasks
            .iter()
            .filter(|r| r.annotation == "child")
            .all(|r| r.parent_guid == root.guid));
        let report = validate(&t);
        assert!(report.is_valid(), "{:?}", report.violations);
    }
}

#[test]
fn workload_trace_validates_and_round_trips() {
    for backend in Backend::ALL {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        traced_run(&path, backend, 4, |h| {
            let cfg = WorkloadConfig {
                walkers: 8,
                accumulators: 2,
                measurements: 3_000,
                burn_in: 50,
                ..WorkloadConfig::default()
            };
            run_workload(h, &cfg, Arc::new(NullSink)).unwrap();
        });
        let t = read_trace(&path).unwrap();
        assert_eq!(t.tasks.len(), 10);
        assert!(!t.counters.is_empty());
        let report = validate(&t);
        assert!(report.is_valid(), "{backend}: {:?}", report.violations);
        if backend == Backend::UserTasks {
            assert!(t.tasks.iter().any(|r| !r.yields.is_empty()));
        }

        let copy = dir.path().join("copy.jsonl");
        write_trace(&copy, &t.records).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&copy).unwrap());
        assert_eq!(read_trace(&copy).unwrap(), t);
    }
}

#[test]
fn truncated_tail_recovers_complete_records() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    traced_run(&path, Backend::UserTasks, 2, |h| {
        let fs: Vec<_> = (0..20)
            .map(|_| h.spawn(annotated("t", || ())).unwrap())
            .collect();
        fs.into_iter().for_each(|f| f.wait().unwrap());
    });
    let full = read_trace(&path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let cut = text.trim_end().rfind('\n').unwrap() + 10;
    fs::write(&path, &text[..cut]).unwrap();
    let t = read_trace(&path).unwrap();
    assert_eq!(t.discarded_lines, 1);
    assert_eq!(t.records.len(), full.records.len() - 1);
}

#[test]
fn missing_meta_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    fs::write(&path, "{\"kind\":\"counter\",\"name\":\"x\",\"timestamp_ns\":1,\"value\":1.0,\"monotonic\":false}\n").unwrap();
    assert!(read_trace(&path).is_err());
}

#[test]
fn hand_built_dangling_parent() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let task = |guid, parent| {
        TraceRecord::Task(TaskRecord {
            guid,
            parent_guid: parent,
            annotation: "x".into(),
            worker: 0,
            created_ns: 0,
            start_ns: 1,
            stop_ns: 2,
            yields: vec![],
            failed: false,
        })
    };
    let recs = vec![
        TraceRecord::Meta(meta(Backend::OsPool, 1)),
        task(1, 0),
        task(2, 1),
        task(3, 42),
    ];
    write_trace(&path, &recs).unwrap();
    let report = validate(&read_trace(&path).unwrap());
    assert_eq!(report.lineage_violations(), 1);
    assert_eq!(report.violations.len(), 1);
}

#[test]
fn large_trace_reads_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let writer = TraceWriter::create(&path, meta(Backend::UserTasks, 4)).unwrap();
    let tx = writer.sender();
    for i in 1..=50_000u64 {
        tx.task(TaskRecord {
            guid: i,
            parent_guid: i / 2,
            annotation: if i % 3 == 0 { "accumulator" } else { "walker" }.into(),
            worker: (i % 4) as usize,
            created_ns: i * 10,
            start_ns: i * 10 + 3,
            stop_ns: i * 10 + 9,
            yields: vec![(i * 10 + 4, i * 10 + 6)],
            failed: false,
        });
        tx.task(TaskRecord {
            guid: 100_000 + i,
            parent_guid: i,
            annotation: "child".into(),
            worker: 0,
            created_ns: i * 10 + 1,
            start_ns: i * 10 + 2,
            stop_ns: i * 10 + 2,
            yields: vec![],
            failed: false,
        });
    }
    drop(tx);
    let stats = writer.finish();
    assert_eq!(stats.tasks_written, 100_000);
    let start = Instant::now();
    let t = read_trace(&path).unwrap();
    let report = validate(&t);
    let elapsed = start.elapsed();
    assert_eq!(t.tasks.len(), 100_000);
    assert!(
        report.is_valid(),
        "{:?}",
        &report.violations[..3.min(report.violations.len())]
    );
    assert!(elapsed < Duration::from_secs(5), "{elapsed:?}");
}

#[test]
fn full_buffer_drops_counters_not_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let writer = TraceWriter::with_capacity(&path, meta(Backend::OsPool, 1), 1).unwrap();
    let tx = writer.sender();
    for i in 0..2_000u64 {
        tx.counter(CounterRecord {
            name: "c".into(),
            timestamp_ns: i,
            value: i as f64,
            monotonic: true,
        });
        tx.task(TaskRecord {
            guid: i + 1,
            parent_guid: 0,
            annotation: "t".into(),
            worker: 0,
            created_ns: i,
            start_ns: i,
            stop_ns: i,
            yields: vec![],
            failed: false,
        });
    }
    drop(tx);
    let stats = writer.finish();
    assert_eq!(stats.tasks_written, 2_000);
    assert_eq!(stats.counters_written + stats.counters_dropped, 2_000);
    let t = read_trace(&path).unwrap();
    assert_eq!(t.tasks.len(), 2_000);
    assert_eq!(t.counters.len() as u64, stats.counters_written);
    assert!(validate(&t).is_valid());
}

#[test]
fn unwritable_path_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing").join("t.jsonl");
    assert!(TraceWriter::create(&path, meta(Backend::OsPool, 1)).is_err());
}

#[test]
fn timeline_export() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    traced_run(&path, Backend::UserTasks, 2, |h| {
        let fs: Vec<_> = (0..8)
            .map(|_| {
                h.spawn(annotated("w", || {
                    std::thread::sleep(Duration::from_millis(2))
                }))
                .unwrap()
            })
            .collect();
        fs.into_iter().for_each(|f| f.wait().unwrap());
    });
    let t = read_trace(&path).unwrap();
    let out = dir.path().join("timeline.json");
    export_timeline(&t, &out).unwrap();
    let doc: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let events = doc["traceEvents"].as_array().unwrap();
    let tasks = events.iter().filter(|e| e["cat"] == "task").count();
    assert_eq!(tasks, 8);
    let tracks: std::collections::BTreeSet<_> = events
        .iter()
        .filter(|e| e["ph"] == "C")
        .map(|e| e["name"].as_str().unwrap())
        .collect();
    assert_eq!(tracks.len(), t.counter_names().len());

    let empty = dir.path().join("empty.json");
    let bare = taskbench_core::trace::Trace::empty(meta(Backend::OsPool, 1));
    export_timeline(&bare, &empty).unwrap();
    let doc: Value = serde_json::from_str(&fs::read_to_string(&empty).unwrap()).unwrap();
    assert_eq!(doc["traceEvents"], Value::Array(vec![]));
}

#[test]
fn finish_does_not_wait_for_live_senders() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let writer = TraceWriter::create(&path, meta(Backend::OsPool, 1)).unwrap();
    let tx = writer.sender();
    let task = |guid| TaskRecord {
        guid,
        parent_guid: 0,
        annotation: "t".into(),
        worker: 0,
        created_ns: 0,
        start_ns: 0,
        stop_ns: 0,
        yields: vec![],
        failed: false,
    };
    tx.task(task(1));
    let stats = writer.finish();
    assert_eq!(stats.tasks_written, 1);
    tx.task(task(2));
    assert_eq!(read_trace(&path).unwrap().tasks.len(), 1);
}
