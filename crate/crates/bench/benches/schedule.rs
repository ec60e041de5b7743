use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rfann_core::schedule::build_incidence;
use rfann_core::{partition, schedule_greedy, GridParams};

fn greedy(c: &mut Criterion) {
    let ds = rfann_bench::dataset(20_000, 4);
    let qs = rfann_bench::queries(&ds, 1000);
    let mut group = c.benchmark_group("schedule_greedy");
    for cells in [16, 64, 256] {
        let (grid, _) = partition(&ds, &GridParams::with_cells(cells)).unwrap();
        let a = build_incidence(&qs, &grid, Some(cells));
        let order = a.referenced_cells();
        group.bench_with_input(BenchmarkId::new("cells", cells), &order, |b, order| {
            b.iter(|| schedule_greedy(&a, black_box(order), 4).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, greedy);
criterion_main!(benches);
