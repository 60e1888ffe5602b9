use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use taskbench_core::ising::oracle::{histogram_parallel, histogram_sequential};

fn enumeration(c: &mut Criterion) {
    let mut group = c.benchmark_group("enumeration");
    group.sample_size(10);
    for l in [4usize, 5] {
        group.bench_with_input(BenchmarkId::new("sequential", l), &l, |b, &l| {
            b.iter(|| histogram_sequential(black_box(l)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("parallel", l), &l, |b, &l| {
            b.iter(|| histogram_parallel(black_box(l)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, enumeration);
criterion_main!(benches);
