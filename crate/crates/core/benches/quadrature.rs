use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use jetsolve::par;
use jetsolve::potential::{newtonian_potential, potential_hessian};
use jetsolve::{BallGrid, ScalarField};

fn bench(c: &mut Criterion) {
    let mut group = c.benchmark_group("potential");
    group.sample_size(10);
    for (dim, res) in [(2, 41), (3, 17)] {
        let grid = BallGrid::new(dim, 1.0, res).unwrap();
        let f = ScalarField::from_fn(grid, |x| x[0].sin() + x[1] * x[1]).unwrap();
        let label = format!("n{dim}_res{res}");
        for (mode, parallel) in [("sequential", false), ("parallel", true)] {
            group.bench_with_input(BenchmarkId::new(format!("value_{mode}"), &label), &f, |b, f| {
                par::set_parallel(parallel);
                b.iter(|| newtonian_potential(f).unwrap())
            });
            group.bench_with_input(BenchmarkId::new(format!("hessian_{mode}"), &label), &f, |b, f| {
                par::set_parallel(parallel);
                b.iter(|| potential_hessian(f).unwrap())
            });
        }
    }
    par::set_parallel(true);
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
