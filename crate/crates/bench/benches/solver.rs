use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use pcompliance_core::capacity::capacity_at;
use pcompliance_core::construction::{solve_all_cubes, ConstructionParams};
use pcompliance_core::geometry::axis_segment;
use pcompliance_core::{rasterize, solve, CapacityTarget, CrackSet, Grid, SolverConfig, Source};

fn torsion(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve");
    group.sample_size(10);
    for m in [65, 129] {
        let grid = Grid::cube(vec![-1.0, -1.0], 2.0, m).unwrap();
        let cracks = CrackSet::single(axis_segment(&[0.0, 0.0], 0, 1.0).unwrap());
        let mask = rasterize(&cracks, &grid).unwrap();
        let f = Source::Constant(1.0).sample(&grid);
        for p in [1.5, 2.0, 3.0] {
            group.bench_with_input(BenchmarkId::new(format!("p={p}"), m), &m, |b, _| {
                b.iter(|| solve(black_box(&f), &grid, &mask, p, &SolverConfig::default()).unwrap())
            });
        }
    }
    group.finish();
}

fn capacity(c: &mut Criterion) {
    let mut group = c.benchmark_group("capacity");
    group.sample_size(10);
    let target = CapacityTarget::segment(2, 0.25).unwrap();
    for p in [1.5, 2.0, 3.0] {
        group.bench_function(format!("segment p={p} h=0.05"), |b| {
            b.iter(|| capacity_at(black_box(&target), p, 0.05, None).unwrap())
        });
    }
    group.finish();
}

fn local_cubes(c: &mut Criterion) {
    let params = ConstructionParams::new(2, 0.25, 1.0, 2, 2.0).unwrap();
    let g = Source::Constant(1.0);
    c.bench_function("construction n=2 local solves", |b| {
        b.iter(|| solve_all_cubes(black_box(&params), &g, 33, &SolverConfig::default()).unwrap())
    });
}

criterion_group!(benches, torsion, capacity, local_cubes);
criterion_main!(benches);
