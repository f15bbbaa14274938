//! Sequential against rayon on the batched workloads.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mfg_core::analysis::{band_limited_fields, check_apriori_adjoint, check_carleman, draw_samples, SamplerSpec};
use mfg_core::costs::{positive_direction, Psi, RunningCost, TerminalCost, TerminalCostSpec};
use mfg_core::exec::Parallelism;
use mfg_core::forward::SolverOptions;
use mfg_core::inverse::{measurement_derivative, ProbePlan};
use mfg_core::ops::Sign;
use mfg_core::{Grid, GridSpec};

const MODES: [(&str, Parallelism); 2] = [("sequential", Parallelism::Sequential), ("rayon", Parallelism::Rayon)];

fn batches(c: &mut Criterion) {
    let grid = Grid::new(GridSpec::coarse(17, 17)).unwrap();
    let f1 = vec![1.0; grid.inner().len()];
    let plan = ProbePlan::lattice(&grid, 5);
    let spec = SamplerSpec::default();
    let samples = draw_samples(&spec);
    let fields = band_limited_fields(&grid, 20, 3, 0);
    let f = RunningCost::exp_shifted(grid.outer().len(), 2).unwrap();
    let g = TerminalCost::new(grid.outer(), TerminalCostSpec { radius: 0.125, psi: Psi::Exp { a: 1.0 } }).unwrap();
    let dir = positive_direction(&grid, 0.5).into_values();

    let mut group = c.benchmark_group("batches");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_with_input(BenchmarkId::new("probe_tests", name), &mode, |b, &m| b.iter(|| plan.tests(&grid, &f1, m).unwrap()));
        group.bench_with_input(BenchmarkId::new("carleman", name), &mode, |b, &m| {
            b.iter(|| check_carleman(&grid, &samples, &[2.0, 4.0, 8.0], Sign::Plus, &spec, m).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("apriori_adjoint", name), &mode, |b, &m| b.iter(|| check_apriori_adjoint(&grid, &f1, &fields, m).unwrap()));
        group.bench_with_input(BenchmarkId::new("measurement_derivative_2", name), &mode, |b, &m| {
            b.iter(|| measurement_derivative(&grid, &f, &g, &dir, 2, 2e-2, &SolverOptions::default(), m).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, batches);
criterion_main!(benches);
