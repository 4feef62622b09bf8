use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lukconvex::experiment::Variant;
use lukconvex::kernel::train;
use lukconvex::qp::{self, DEFAULT_MAX_ITER};
use lukconvex_bench::{random_qp, rectangles};

fn dense_qp(c: &mut Criterion) {
    let mut group = c.benchmark_group("qp_dense");
    for (n, m) in [(8, 10), (40, 60), (120, 200)] {
        let p = random_qp(n, m, 11);
        group.bench_with_input(BenchmarkId::from_parameter(format!("{n}x{m}")), &p, |b, p| b.iter(|| qp::solve(p, 1e-6, DEFAULT_MAX_ITER).unwrap()));
    }
    group.finish();
}

fn kernel_training(c: &mut Criterion) {
    let mut group = c.benchmark_group("kernel_rectangles");
    group.sample_size(10);
    for step in [1.0, 0.5] {
        let p = rectangles(step, Variant::Concave);
        group.bench_with_input(BenchmarkId::from_parameter(step), &p, |b, p| b.iter(|| train(p, 1e-6, DEFAULT_MAX_ITER).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, dense_qp, kernel_training);
criterion_main!(benches);
