mod common;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;

use common::{all_configs, recorded_executor, Recorder};
use taskbench_core::exec::{
    current_task, yield_now, SpawnError, TaskError, TaskEventKind, TaskState, ROOT_GUID,
};
use taskbench_core::{annotated, Backend, Executor, ExecutorConfig, TaskCondvar, TaskMutex};

fn started(config: ExecutorConfig) -> (Executor, taskbench_core::ExecHandle) {
    let mut exec = Executor::new(config).unwrap();
    let h = exec.start().unwrap();
    (exec, h)
}

#[test]
fn single_task_returns_value() {
    for config in all_configs(&[1, 4]) {
        let (exec, h) = started(config);
        let f = h.spawn(|| 42).unwrap();
        let info = f.task().clone();
        assert_eq!(f.wait().unwrap(), 42);
        assert_eq!(info.state(), TaskState::Completed);
        assert_eq!(info.parent_guid(), ROOT_GUID);
        let s = exec.shutdown();
        assert_eq!(s.tasks_completed, 1);
        assert_eq!(s.executed_per_worker.iter().sum::<u64>(), 1);
    }
}

#[test]
fn os_pool_round_robin_is_even() {
    let (exec, h) = started(ExecutorConfig::new(Backend::OsPool, 4));
    let futures: Vec<_> = (0..1000).map(|_| h.spawn(|| ()).unwrap()).collect();
    for f in futures {
        f.wait().unwrap();
    }
    let s = exec.shutdown();
    assert_eq!(s.enqueued_per_worker, vec![250; 4]);
}

#[test]
fn results_match_sequential_execution() {
    let work = |i: usize| move || i * i + 1;
    let mut expected: Vec<usize> = (0..10).map(|i| work(i)()).collect();
    expected.sort_unstable();
    for config in all_configs(&[1, 2, 4, 8]) {
        let (exec, h) = started(config.clone());
        let futures: Vec<_> = (0..10).map(|i| h.spawn(work(i)).unwrap()).collect();
        let mut got: Vec<usize> = futures.into_iter().map(|f| f.wait().unwrap()).collect();
        got.sort_unstable();
        assert_eq!(got, expected, "{config:?}");
        exec.shutdown();
    }
}

#[test]
fn waiting_on_completed_future_emits_no_yield() {
    for backend in Backend::ALL {
        let (mut exec, rec) = recorded_executor(ExecutorConfig::new(backend, 2));
        let h = exec.start().unwrap();
        let outer = h
            .spawn({
                let h = h.clone();
                move || {
                    let child = h.spawn(|| 7).unwrap();
                    while !child.is_ready() {
                        std::thread::sleep(Duration::from_millis(1));
                    }
                    let me = current_task().unwrap().guid();
                    (child.wait().unwrap(), me)
                }
            })
            .unwrap();
        let (v, guid) = outer.wait().unwrap();
        assert_eq!(v, 7);
        exec.shutdown();
        assert_eq!(rec.count_for(TaskEventKind::Yielded, guid), 0, "{backend}");
    }
}

#[test]
fn nested_wait_on_single_user_worker_completes() {
    let (exec, h) = started(ExecutorConfig::new(Backend::UserTasks, 1));
    let inner = h.clone();
    let a = h
        .spawn(move || inner.spawn(|| 5).unwrap().wait().unwrap() + 1)
        .unwrap();
    assert_eq!(a.wait().unwrap(), 6);
    let s = exec.shutdown();
    assert_eq!(s.tasks_completed, 2);
    assert_eq!(s.executed_per_worker, vec![2]);
}

/// Spawns A, which spawns B and waits on it; returns whether A finished
/// within the timeout.
fn nested_wait_finishes(config: ExecutorConfig) -> (bool, Executor) {
    let (exec, h) = started(config);
    let inner = h.clone();
    let a = h
        .spawn(move || inner.spawn(|| 1).unwrap().wait().unwrap())
        .unwrap();
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let _ = tx.send(a.wait());
    });
    let ok = matches!(rx.recv_timeout(Duration::from_secs(2)), Ok(Ok(1)));
    (ok, exec)
}

#[test]
fn nested_wait_on_saturated_os_pool_deadlocks_without_handoff() {
    let (ok, exec) =
        nested_wait_finishes(ExecutorConfig::new(Backend::OsPool, 1).with_blocking_handoff(false));
    assert!(!ok, "expected the documented deadlock");
    // The pool can never drain; leak it rather than hang in shutdown.
    std::mem::forget(exec);

    let (ok, exec) =
        nested_wait_finishes(ExecutorConfig::new(Backend::OsPool, 2).with_blocking_handoff(false));
    assert!(ok);
    exec.shutdown();

    let (ok, exec) = nested_wait_finishes(ExecutorConfig::new(Backend::OsPool, 1));
    assert!(ok, "blocking handoff should serve the queue");
    let s = exec.shutdown();
    assert!(s.os_threads >= 2);
}

#[test]
fn stealing_spreads_work_from_one_queue() {
    let mut good_runs = 0;
    for _ in 0..5 {
        let (exec, h) = started(ExecutorConfig::new(Backend::UserTasks, 4));
        // External spawns land on worker 0.
        let fs: Vec<_> = (0..100)
            .map(|_| {
                h.spawn(|| std::thread::sleep(Duration::from_micros(500)))
                    .unwrap()
            })
            .collect();
        for f in fs {
            f.wait().unwrap();
        }
        let s = exec.shutdown();
        assert_eq!(s.enqueued_per_worker[0], 100);
        assert_eq!(s.executed_per_worker.iter().sum::<u64>(), 100);
        if s.executed_per_worker.iter().all(|&n| n >= 1) {
            good_runs += 1;
        }
        assert_eq!(
            s.steals_total(),
            s.executed_per_worker[1..].iter().sum::<u64>()
        );
    }
    assert!(good_runs >= 4, "only {good_runs}/5 runs used every worker");
}

#[test]
fn steal_disabled_keeps_work_on_owner() {
    let (exec, h) = started(ExecutorConfig::new(Backend::UserTasks, 4).with_steal(false));
    let fs: Vec<_> = (0..50).map(|_| h.spawn(|| ()).unwrap()).collect();
    for f in fs {
        f.wait().unwrap();
    }
    let s = exec.shutdown();
    assert_eq!(s.executed_per_worker, vec![50, 0, 0, 0]);
    assert_eq!(s.steals_total(), 0);
}

#[test]
fn yield_count_is_preserved() {
    let (mut exec, rec) = recorded_executor(ExecutorConfig::new(Backend::UserTasks, 1));
    let h = exec.start().unwrap();
    let f = h
        .spawn(|| {
            for _ in 0..5 {
                yield_now();
            }
        })
        .unwrap();
    let guid = f.guid();
    f.wait().unwrap();
    exec.shutdown();
    assert_eq!(rec.count_for(TaskEventKind::Yielded, guid), 5);
    assert_eq!(rec.count_for(TaskEventKind::Resumed, guid), 5);
}

#[test]
fn fcfs_interleaving_with_one_yield_each() {
    let (mut exec, rec) = recorded_executor(ExecutorConfig::new(Backend::UserTasks, 1));
    let h = exec.start().unwrap();
    let inner = h.clone();
    // Spawn both from inside a task so neither can start before both are queued.
    let pair = h
        .spawn(move || {
            let a = inner.spawn(annotated("A", yield_now)).unwrap();
            let b = inner.spawn(annotated("B", yield_now)).unwrap();
            (a, b)
        })
        .unwrap()
        .wait()
        .unwrap();
    pair.0.wait().unwrap();
    pair.1.wait().unwrap();
    exec.shutdown();
    let trace: Vec<String> = rec
        .snapshot()
        .into_iter()
        .filter(|e| e.annotation == "A" || e.annotation == "B")
        .filter_map(|e| {
            let what = match e.kind {
                TaskEventKind::Started => "start",
                TaskEventKind::Yielded => "yield",
                TaskEventKind::Stopped => "finish",
                _ => return None,
            };
            Some(format!("{}-{what}", e.annotation))
        })
        .collect();
    assert_eq!(
        trace,
        ["A-start", "A-yield", "B-start", "B-yield", "A-finish", "B-finish"]
    );
}

#[test]
fn yield_on_os_pool_is_a_noop() {
    let (mut exec, rec) = recorded_executor(ExecutorConfig::new(Backend::OsPool, 2));
    let h = exec.start().unwrap();
    let f = h
        .spawn(|| {
            yield_now();
            current_task().unwrap().state()
        })
        .unwrap();
    assert_eq!(f.wait().unwrap(), TaskState::Running);
    exec.shutdown();
    assert_eq!(rec.count(TaskEventKind::Yielded), 0);
}

#[test]
fn yield_outside_task_warns() {
    let (mut exec, rec) = recorded_executor(ExecutorConfig::new(Backend::UserTasks, 1));
    let h = exec.start().unwrap();
    h.yield_now();
    exec.shutdown();
    assert_eq!(rec.count(TaskEventKind::Warning), 1);
    assert_eq!(rec.count(TaskEventKind::Yielded), 0);
}

#[test]
fn mutex_counter_is_exact() {
    for config in all_configs(&[1, 4]) {
        let (exec, h) = started(config.clone());
        let counter = Arc::new(TaskMutex::new(0u64));
        let fs: Vec<_> = (0..8)
            .map(|_| {
                let c = counter.clone();
                h.spawn(move || {
                    for i in 0..1000 {
                        *c.lock() += 1;
                        if i % 100 == 0 {
                            yield_now();
                        }
                    }
                })
                .unwrap()
            })
            .collect();
        for f in fs {
            f.wait().unwrap();
        }
        exec.shutdown();
        assert_eq!(*counter.lock(), 8000, "{config:?}");
    }
}

#[test]
fn condvar_waiter_sees_predicate_once() {
    for config in all_configs(&[1, 2]) {
        let (exec, h) = started(config.clone());
        let state = Arc::new((TaskMutex::new(false), TaskCondvar::new()));
        let observed = Arc::new(AtomicUsize::new(0));
        let waiter = {
            let (state, observed) = (state.clone(), observed.clone());
            h.spawn(move || {
                let (m, cv) = &*state;
                let mut ready = m.lock();
                while !*ready {
                    ready = cv.wait(ready);
                }
                observed.fetch_add(1, Ordering::SeqCst);
            })
            .unwrap()
        };
        let notifier = {
            let state = state.clone();
            h.spawn(move || {
                let (m, cv) = &*state;
                *m.lock() = true;
                cv.notify_one();
            })
            .unwrap()
        };
        notifier.wait().unwrap();
        waiter.wait().unwrap();
        exec.shutdown();
        assert_eq!(observed.load(Ordering::SeqCst), 1, "{config:?}");
    }
}

#[test]
#[should_panic(expected = "non-owner")]
fn unlock_by_non_owner_faults() {
    let m = TaskMutex::new(());
    let raw: &'static _ = Box::leak(Box::new(m));
    raw.raw().lock();
    std::thread::scope(|s| {
        s.spawn(|| raw.raw().unlock())
            .join()
            .unwrap_or_else(|e| std::panic::resume_unwind(e));
    });
}

#[test]
#[should_panic(expected = "without holding the mutex")]
fn condvar_wait_without_lock_faults() {
    let m = TaskMutex::new(());
    TaskCondvar::new().wait_raw(m.raw());
}

#[test]
fn shutdown_is_idempotent_and_conserves_tasks() {
    for config in all_configs(&[1, 3]) {
        let (exec, _h) = started(config.clone());
        let s = exec.shutdown();
        assert_eq!(s.tasks_spawned, 0);
        assert!(s.executed_per_worker.iter().all(|&n| n == 0));

        let (exec, h) = started(config.clone());
        for _ in 0..100 {
            h.spawn(|| std::hint::black_box(3) * 2).unwrap();
        }
        let first = exec.shutdown();
        assert_eq!(first.executed_per_worker.iter().sum::<u64>(), 100);
        assert_eq!(
            first.tasks_spawned,
            first.tasks_completed + first.tasks_failed
        );
        assert_eq!(exec.shutdown(), first);
        assert_eq!(h.spawn(|| ()).unwrap_err(), SpawnError::Rejected);
    }
}

#[test]
fn panicking_task_propagates_error() {
    for config in all_configs(&[2]) {
        let (exec, h) = started(config);
        let f = h.spawn(|| -> u32 { panic!("boom") }).unwrap();
        let ok = h.spawn(|| 1u32).unwrap();
        match f.wait() {
            Err(TaskError::Panicked { message, .. }) => assert_eq!(message, "boom"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(ok.wait().unwrap(), 1);
        let s = exec.shutdown();
        assert_eq!(s.tasks_failed, 1);
        assert_eq!(s.tasks_completed, 1);
        assert_eq!(s.tasks_spawned, 2);
    }
}

#[test]
fn bounded_queue_applies_backpressure() {
    let (exec, h) = started(
        ExecutorConfig::new(Backend::UserTasks, 1)
            .with_steal(false)
            .with_queue_capacity(Some(2)),
    );
    // Keep the only worker busy (without yielding) while the queue fills.
    let open = Arc::new(std::sync::atomic::AtomicBool::new(false));
    let blocker = {
        let open = open.clone();
        h.spawn(move || {
            while !open.load(Ordering::Acquire) {
                std::thread::sleep(Duration::from_millis(1));
            }
        })
        .unwrap()
    };
    while h.queue_lengths()[0] != 0 {
        std::thread::yield_now();
    }
    let a = h.spawn(|| ()).unwrap();
    let b = h.spawn(|| ()).unwrap();
    assert_eq!(
        h.spawn(|| ()).unwrap_err(),
        SpawnError::Backpressure {
            worker: 0,
            capacity: 2
        }
    );
    open.store(true, Ordering::Release);
    blocker.wait().unwrap();
    a.wait().unwrap();
    b.wait().unwrap();
    let s = exec.shutdown();
    assert_eq!(s.tasks_spawned, 3);
}

#[test]
fn fcfs_order_per_worker_without_stealing() {
    let (mut exec, rec) =
        recorded_executor(ExecutorConfig::new(Backend::UserTasks, 2).with_steal(false));
    let h = exec.start().unwrap();
    let fs: Vec<_> = (0..40).map(|i| h.spawn(move || i).unwrap()).collect();
    let order: Vec<_> = fs.iter().map(|f| f.guid()).collect();
    for f in fs {
        f.wait().unwrap();
    }
    exec.shutdown();
    let starts: Vec<_> = rec
        .snapshot()
        .into_iter()
        .filter(|e| e.kind == TaskEventKind::Started)
        .map(|e| e.guid)
        .collect();
    assert_eq!(starts, order);
}

#[test]
fn events_are_ordered_and_lineage_is_closed() {
    for config in all_configs(&[1, 4]) {
        let (mut exec, rec) = recorded_executor(config.clone());
        let h = exec.start().unwrap();
        let fs: Vec<_> = (0..20)
            .map(|i| {
                let h2 = h.clone();
                h.spawn(move || {
                    let kids: Vec<_> = (0..3).map(|j| h2.spawn(move || i * j).unwrap()).collect();
                    if i % 2 == 0 {
                        yield_now();
                    }
                    kids.into_iter().map(|k| k.wait().unwrap()).sum::<usize>()
                })
                .unwrap()
            })
            .collect();
        for f in fs {
            f.wait().unwrap();
        }
        exec.shutdown();
        check_event_order(&rec);
        assert_eq!(rec.count(TaskEventKind::Created), 80);
        assert_eq!(rec.count(TaskEventKind::Started), 80);
        assert_eq!(rec.count(TaskEventKind::Stopped), 80);
    }
}

fn check_event_order(rec: &Recorder) {
    let events = rec.snapshot();
    let mut created_at: HashMap<u64, usize> = HashMap::new();
    let mut phase: HashMap<u64, u8> = HashMap::new();
    for (i, e) in events.iter().enumerate() {
        match e.kind {
            TaskEventKind::Created => {
                assert!(created_at.insert(e.guid, i).is_none());
                if e.parent != ROOT_GUID {
                    assert!(created_at.contains_key(&e.parent), "parent created later");
                }
                phase.insert(e.guid, 0);
            }
            TaskEventKind::Enqueued => assert_eq!(phase[&e.guid], 0),
            TaskEventKind::Started => {
                assert_eq!(phase[&e.guid], 0);
                phase.insert(e.guid, 1);
            }
            TaskEventKind::Yielded => {
                assert_eq!(phase[&e.guid], 1);
                phase.insert(e.guid, 2);
            }
            TaskEventKind::Resumed => {
                assert_eq!(phase[&e.guid], 2);
                phase.insert(e.guid, 1);
            }
            TaskEventKind::Stopped => {
                assert_eq!(phase[&e.guid], 1);
                phase.insert(e.guid, 3);
            }
            _ => {}
        }
    }
    assert!(phase.values().all(|&p| p == 3));
}

#[test]
fn parent_guid_is_spawning_task() {
    for config in all_configs(&[2]) {
        let (exec, h) = started(config);
        let h2 = h.clone();
        let (parent, child_parent) = h
            .spawn(move || {
                let me = current_task().unwrap().guid();
                let c = h2.spawn(|| current_task().unwrap().parent_guid()).unwrap();
                (me, c.wait().unwrap())
            })
            .unwrap()
            .wait()
            .unwrap();
        assert_eq!(parent, child_parent);
        exec.shutdown();
    }
}

#[test]
fn listener_after_start_is_rejected() {
    let mut exec = Executor::new(ExecutorConfig::new(Backend::OsPool, 1)).unwrap();
    exec.start().unwrap();
    assert!(exec.attach_listener(Arc::new(Recorder::default())).is_err());
    assert!(exec.start().is_err());
    exec.shutdown();
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(Executor::new(ExecutorConfig::new(Backend::OsPool, 0)).is_err());
    assert!(
        Executor::new(ExecutorConfig::new(Backend::UserTasks, 1).with_queue_capacity(Some(0)))
            .is_err()
    );
    assert_eq!("user-tasks".parse::<Backend>(), Ok(Backend::UserTasks));
    assert!("green".parse::<Backend>().is_err());
}

#[test]
fn external_thread_waits_block_until_done() {
    for config in all_configs(&[1]) {
        let (exec, h) = started(config);
        let f = h
            .spawn(|| {
                std::thread::sleep(Duration::from_millis(20));
                9
            })
            .unwrap();
        assert_eq!(f.wait().unwrap(), 9);
        exec.shutdown();
    }
}

#[test]
fn many_blocked_tasks_resume_on_user_backend() {
    let (exec, h) = started(ExecutorConfig::new(Backend::UserTasks, 2));
    let gate = Arc::new((TaskMutex::new(0usize), TaskCondvar::new()));
    let waiters: Vec<_> = (0..200)
        .map(|_| {
            let gate = gate.clone();
            h.spawn(move || {
                let (m, cv) = &*gate;
                let g = cv.wait_while(m.lock(), |n| *n == 0);
                *g
            })
            .unwrap()
        })
        .collect();
    std::thread::sleep(Duration::from_millis(20));
    {
        let (m, cv) = &*gate;
        *m.lock() = 3;
        cv.notify_all();
    }
    for w in waiters {
        assert_eq!(w.wait().unwrap(), 3);
    }
    assert_eq!(exec.shutdown().tasks_completed, 200);
}
