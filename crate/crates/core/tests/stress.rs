use std::collections::VecDeque;
use std::sync::Arc;

use proptest::prelude::*;
use taskbench_core::exec::{TaskListener, TaskState, WorkerQueues};
use taskbench_core::shapes::{run_shape, OrderChecker, TaskShape};
use taskbench_core::{Backend, ExecutorConfig};

fn check(backend: Backend, workers: usize, shape: &TaskShape) {
    let order = Arc::new(OrderChecker::new());
    let listeners: Vec<Arc<dyn TaskListener>> = vec![order.clone()];
    let run = run_shape(ExecutorConfig::new(backend, workers), shape, &listeners).unwrap();
    assert!(
        run.exactly_once(),
        "{backend} x{workers} {shape:?}: {:?}",
        run.summary
    );
    if shape.lock {
        assert_eq!(run.counter, run.expected);
    }
    assert_eq!(order.violations(), Vec::<String>::new());
    assert_eq!(order.unfinished(), 0);
    let executed: u64 = run.summary.executed_per_worker.iter().sum();
    assert_eq!(executed, run.expected);
}

#[test]
fn suite_runs_exactly_once_everywhere() {
    for shape in TaskShape::suite() {
        for workers in [1, 2, 4, 8] {
            for backend in Backend::ALL {
                check(backend, workers, &shape);
            }
        }
    }
}

fn shape_strategy() -> impl Strategy<Value = TaskShape> {
    (1usize..12, 0u32..3, 0usize..5, 0u32..3, any::<bool>()).prop_map(
        |(roots, depth, fanout, yields, lock)| TaskShape {
            roots,
            depth,
            fanout,
            yields,
            lock,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_shapes_run_exactly_once(
        shape in shape_strategy(),
        workers in 1usize..6,
        user in any::<bool>(),
        steal in any::<bool>(),
    ) {
        let backend = if user { Backend::UserTasks } else { Backend::OsPool };
        let order = Arc::new(OrderChecker::new());
        let listeners: Vec<Arc<dyn TaskListener>> = vec![order.clone()];
        let cfg = ExecutorConfig::new(backend, workers).with_steal(steal);
        let run = run_shape(cfg, &shape, &listeners).unwrap();
        prop_assert!(run.exactly_once());
        prop_assert!(order.violations().is_empty(), "{:?}", order.violations());
    }

    #[test]
    fn owner_pops_fifo_thieves_take_newest(ops in prop::collection::vec((0u8..3, 0usize..3), 1..200)) {
        let queues = WorkerQueues::new(3);
        let mut model: Vec<VecDeque<u32>> = vec![VecDeque::new(); 3];
        let mut next = 0u32;
        for (op, w) in ops {
            match op {
                0 => {
                    queues.queue(w).push_back(next);
                    model[w].push_back(next);
                    next += 1;
                }
                1 => prop_assert_eq!(queues.queue(w).pop_front(), model[w].pop_front()),
                _ => {
                    // Thief `w` scans the other queues in ring order.
                    let expect = (1..3)
                        .map(|k| (w + k) % 3)
                        .find(|&v| !model[v].is_empty())
                        .and_then(|v| model[v].pop_back());
                    prop_assert_eq!(queues.steal(w), expect);
                }
            }
            let lens: Vec<usize> = model.iter().map(VecDeque::len).collect();
            prop_assert_eq!(queues.lengths(), lens);
        }
    }
}

#[test]
fn only_lifecycle_transitions_are_legal() {
    use TaskState::*;
    let all = [Created, Ready, Running, Yielded, Blocked, Completed];
    let legal = [
        (Created, Ready),
        (Ready, Running),
        (Running, Yielded),
        (Running, Blocked),
        (Running, Completed),
        (Yielded, Ready),
        (Blocked, Ready),
    ];
    for a in all {
        for b in all {
            assert_eq!(
                a.can_transition_to(b),
                legal.contains(&(a, b)),
                "{a:?} -> {b:?}"
            );
        }
    }
    assert!(all.iter().all(|s| !Completed.can_transition_to(*s)));
}
