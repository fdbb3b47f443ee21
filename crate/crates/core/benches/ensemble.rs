use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use inmart::ensemble::{run, EnsembleConfig, Execution, Observable};
use inmart::master_eq::uniform_grid;
use inmart::models::{
    build_chain, chain_initial_state, controllable_initial_state, controllable_reference, site_population, ChainParams,
};
use inmart::trajectory::SchemeConfig;

fn controllable(c: &mut Criterion) {
    let model = controllable_reference();
    let psi = controllable_initial_state();
    let base = EnsembleConfig::new(1000, 1, SchemeConfig::waiting_time(1e-2), uniform_grid(3.0, 0.1))
        .with_observable(Observable::population("ee", 2, 0));
    let mut group = c.benchmark_group("controllable_m1000");
    group.sample_size(10);
    for execution in [Execution::Sequential, Execution::Parallel] {
        let cfg = base.clone().with_execution(execution);
        group.bench_function(BenchmarkId::from_parameter(format!("{execution:?}")), |b| {
            b.iter(|| run(&model, &psi, &cfg).unwrap())
        });
    }
    group.finish();
}

fn chain(c: &mut Criterion) {
    let mut group = c.benchmark_group("chain_m500");
    group.sample_size(10);
    for n in [3, 5] {
        let model = build_chain(&ChainParams::reference(n)).unwrap();
        let psi = chain_initial_state(n);
        let mut base = EnsembleConfig::new(500, 1, SchemeConfig::waiting_time(5e-3), uniform_grid(1.0, 0.05));
        for site in 0..n {
            base = base.with_observable(Observable::sparse(format!("site{site}"), site_population(site, n)).unwrap());
        }
        for execution in [Execution::Sequential, Execution::Parallel] {
            let cfg = base.clone().with_execution(execution);
            group.bench_with_input(BenchmarkId::new(format!("{execution:?}"), n), &cfg, |b, cfg| {
                b.iter(|| run(&model, &psi, cfg).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, controllable, chain);
criterion_main!(benches);
