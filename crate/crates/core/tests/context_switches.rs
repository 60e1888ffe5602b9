// Process-wide counters: kept in its own test binary so no other test's
// threads add to the count.

use std::sync::Arc;

use taskbench_core::ising::{run_workload, NullSink, WorkloadConfig};
use taskbench_core::measure::sources::rusage_self;
use taskbench_core::{Backend, Executor, ExecutorConfig};

fn voluntary_delta(backend: Backend, cfg: &WorkloadConfig) -> u64 {
    let mut exec = Executor::new(ExecutorConfig::new(backend, 4)).unwrap();
    let h = exec.start().unwrap();
    let before = rusage_self().unwrap().voluntary_switches;
    run_workload(&h, cfg, Arc::new(NullSink)).unwrap();
    let after = rusage_self().unwrap().voluntary_switches;
    exec.shutdown();
    after - before
}

#[test]
fn user_tasks_switch_less_on_blocking_workload() {
    if rusage_self().is_none() {
        eprintln!("context-switch accounting unavailable; skipped");
        return;
    }
    let cfg = WorkloadConfig {
        walkers: 8,
        accumulators: 2,
        measurements: 20_000,
        burn_in: 100,
        ..WorkloadConfig::default()
    };
    let mut os = Vec::new();
    let mut user = Vec::new();
    for _ in 0..3 {
        os.push(voluntary_delta(Backend::OsPool, &cfg));
        user.push(voluntary_delta(Backend::UserTasks, &cfg));
    }
    os.sort();
    user.sort();
    eprintln!("voluntary context switches: os-pool {os:?}, user-tasks {user:?}");
    assert!(user[1] < os[1]);
}
