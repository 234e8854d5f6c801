use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use llob::analytic::solve_a;
use llob::pde::cn_step;
use llob::*;
use std::hint::black_box;

fn impact(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_impact");
    group.sample_size(10);
    let p = ModelParams::plain(2f64.sqrt(), 1.0).unwrap();
    for n in [256, 1024] {
        let grid = TimeGrid::new(1.0, n).unwrap();
        let m = ExecutionProfile::constant(grid, 1.0).unwrap();
        let cfg = SolverConfig::default().with_steps(n);
        for variant in [KernelVariant::Llob(p.clone()), KernelVariant::dep_can(p.clone())] {
            group.bench_with_input(BenchmarkId::new(variant.name(), n), &n, |b, _| {
                b.iter(|| solve_impact(black_box(&m), &variant, &cfg).unwrap())
            });
        }
    }
    group.finish();
}

fn crank_nicolson(c: &mut Criterion) {
    let p = ModelParams::new(1.0, 0.5, 0.0, CancellationRate::constant(0.0).unwrap(), 1.0).unwrap();
    let mut group = c.benchmark_group("cn_step");
    for cells in [200, 2000] {
        let grid = GridSpec::new(8.0, cells, 0.01).unwrap();
        let state = BookState::linear(grid.space(), 1.0);
        group.bench_with_input(BenchmarkId::from_parameter(cells), &cells, |b, _| {
            b.iter(|| cn_step(black_box(&state), &p, 0.1, &grid).unwrap())
        });
    }
    group.finish();
}

fn self_similar(c: &mut Criterion) {
    c.bench_function("solve_a", |b| b.iter(|| solve_a(black_box(3.0)).unwrap()));
}

criterion_group!(benches, impact, crank_nicolson, self_similar);
criterion_main!(benches);
