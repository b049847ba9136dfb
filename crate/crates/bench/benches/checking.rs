use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use prooftree_bench::{fixture, updated, UPDATES};
use prooftree_core::{oracle_recheck, ueberpruefe_baum, Budget};

fn checking(c: &mut Criterion) {
    let mut group = c.benchmark_group("checking");
    for n in [10, 40] {
        let f = fixture(n).unwrap();
        for (name, update) in UPDATES {
            let (post, change) = updated(&f, update).unwrap();
            group.bench_with_input(BenchmarkId::new(format!("incremental/{name}"), n), &n, |b, _| {
                b.iter(|| ueberpruefe_baum(&f.tree, &change, &post, Budget::default()).unwrap())
            });
            group.bench_with_input(BenchmarkId::new(format!("full/{name}"), n), &n, |b, _| {
                b.iter(|| oracle_recheck(&post, &f.constraint, Budget::default()).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, checking);
criterion_main!(benches);
