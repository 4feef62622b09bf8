use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lukconvex::{classify, compile, normalize, parse_formula, FragmentLabel};
use lukconvex_bench::clause_chain;

fn worked_example(c: &mut Criterion) {
    let f = normalize(&parse_formula("((x ^ y) + ~y + z) ^ ~z").unwrap());
    c.bench_function("compile_example", |b| b.iter(|| compile(std::hint::black_box(&f), FragmentLabel::Concave).unwrap()));
}

fn clause_chains(c: &mut Criterion) {
    let mut group = c.benchmark_group("compile_chain");
    for n in [4, 16, 64] {
        let f = normalize(&parse_formula(&clause_chain(n)).unwrap());
        group.bench_with_input(BenchmarkId::from_parameter(n), &f, |b, f| {
            b.iter(|| {
                let label = classify(f).unwrap();
                compile(f, label).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, worked_example, clause_chains);
criterion_main!(benches);
