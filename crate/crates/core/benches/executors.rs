use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use taskbench_core::ising::{run_workload, NullSink, WorkloadConfig};
use taskbench_core::shapes::{run_shape, TaskShape};
use taskbench_core::{Backend, Executor, ExecutorConfig};

fn noop_tasks(c: &mut Criterion) {
    let mut group = c.benchmark_group("noop_tasks_10k");
    for backend in Backend::ALL {
        let mut exec = Executor::new(ExecutorConfig::new(backend, 4)).unwrap();
        let h = exec.start().unwrap();
        group.bench_function(BenchmarkId::from_parameter(backend), |b| {
            b.iter(|| {
                let fs: Vec<_> = (0..10_000).map(|_| h.spawn(|| ()).unwrap()).collect();
                fs.into_iter().for_each(|f| f.wait().unwrap());
            })
        });
        exec.shutdown();
    }
    group.finish();
}

fn task_tree(c: &mut Criterion) {
    let shape = TaskShape {
        roots: 8,
        depth: 3,
        fanout: 4,
        yields: 1,
        lock: true,
    };
    let mut group = c.benchmark_group("task_tree");
    group.sample_size(20);
    for backend in Backend::ALL {
        group.bench_function(BenchmarkId::from_parameter(backend), |b| {
            b.iter(|| run_shape(ExecutorConfig::new(backend, 4), &shape, &[]).unwrap())
        });
    }
    group.finish();
}

fn ising_workload(c: &mut Criterion) {
    let cfg = WorkloadConfig {
        walkers: 8,
        accumulators: 2,
        measurements: 5_000,
        burn_in: 100,
        ..WorkloadConfig::default()
    };
    let mut group = c.benchmark_group("ising_w8_a2");
    group.sample_size(10);
    for backend in Backend::ALL {
        group.bench_function(BenchmarkId::from_parameter(backend), |b| {
            b.iter(|| {
                let mut exec = Executor::new(ExecutorConfig::new(backend, 4)).unwrap();
                let h = exec.start().unwrap();
                run_workload(&h, &cfg, Arc::new(NullSink)).unwrap();
                exec.shutdown()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, noop_tasks, task_tree, ising_workload);
criterion_main!(benches);
