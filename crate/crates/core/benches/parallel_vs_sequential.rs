use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use mpf_core::controllers::ControllerKind;
use mpf_core::exec::Execution;
use mpf_core::scenario::{monte_carlo, ImpairmentCase, ScenarioConfig};

fn small_batch() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.scenario.n_agents = 8;
    cfg.scenario.horizon = 5.0;
    cfg.impairment.case = ImpairmentCase::LossOfPropulsion;
    cfg
}

fn monte_carlo_batch(c: &mut Criterion) {
    let cfg = small_batch();
    let kinds = [ControllerKind::NoMpf, ControllerKind::FullMpf];
    let mut group = c.benchmark_group("monte_carlo_4_runs");
    group.sample_size(10).measurement_time(Duration::from_secs(20));
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        group.bench_function(name, |b| b.iter(|| black_box(monte_carlo(&cfg, 4, &kinds, exec))));
    }
    group.finish();
}

criterion_group!(benches, monte_carlo_batch);
criterion_main!(benches);
