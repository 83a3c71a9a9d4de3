use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mnchemo::grid::neumann_laplacian;
use mnchemo::models::solve_neumann_poisson;
use mnchemo::{step_imex, GridSpec, StepperConfig};
use mnchemo_bench::{normalized_model, smooth_state};

fn grids() -> Vec<(&'static str, GridSpec)> {
    vec![
        ("interval_1024", GridSpec::interval(1.0, 1024)),
        ("disk_1024", GridSpec::radial_disk(1.0, 1024)),
        ("rectangle_64x64", GridSpec::rectangle(1.0, 1.0, 64, 64)),
    ]
}

fn laplacian(c: &mut Criterion) {
    let mut group = c.benchmark_group("neumann_laplacian");
    for (name, spec) in grids() {
        let state = smooth_state(spec);
        group.bench_with_input(BenchmarkId::from_parameter(name), &state, |b, s| {
            b.iter(|| neumann_laplacian(&s.u))
        });
    }
    group.finish();
}

fn imex_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("step_imex");
    let model = normalized_model(1.5);
    let cfg = StepperConfig::default();
    for (name, spec) in grids() {
        let state = smooth_state(spec);
        group.bench_with_input(BenchmarkId::from_parameter(name), &state, |b, s| {
            b.iter(|| step_imex(s, &model, &cfg, 1e-3).unwrap())
        });
    }
    group.finish();
}

fn poisson(c: &mut Criterion) {
    let mut group = c.benchmark_group("neumann_poisson");
    for (name, spec) in grids() {
        let state = smooth_state(spec);
        let rhs = state.u.map({
            let mean = state.u.mean();
            move |x| x - mean
        });
        group.bench_with_input(BenchmarkId::from_parameter(name), &rhs, |b, f| {
            b.iter(|| solve_neumann_poisson(f).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, laplacian, imex_step, poisson);
criterion_main!(benches);
