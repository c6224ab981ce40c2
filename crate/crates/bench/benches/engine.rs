use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use lsq_core::policies::pick_min;
use lsq_core::rng::{stream_rng, Stream};
use lsq_core::{preset, PolicyKind, Simulation};
use rand::Rng;

const SLOTS: u64 = 2_000;

fn step_throughput(c: &mut Criterion) {
    let scenario = preset("high_10_90").unwrap();
    let mut group = c.benchmark_group("step");
    group.throughput(Throughput::Elements(SLOTS));
    for policy in [
        PolicyKind::Jsq,
        PolicyKind::JsqD { d: 2 },
        PolicyKind::Jiq,
        PolicyKind::LsqSample { d: 2 },
        PolicyKind::LsqUpdate { p: 0.2 },
        PolicyKind::LsqSmart { p: 0.2 },
    ] {
        let mut config = scenario.config(policy, 0.9, 1);
        config.slots = SLOTS;
        config.warmup = 0;
        group.bench_with_input(BenchmarkId::from_parameter(policy), &config, |b, config| {
            b.iter(|| Simulation::new(config.clone()).unwrap().run_to_end().report.jobs_arrived)
        });
    }
    group.finish();
}

fn monitor_overhead(c: &mut Criterion) {
    let scenario = preset("moderate_50_50").unwrap();
    let mut group = c.benchmark_group("monitors");
    group.throughput(Throughput::Elements(SLOTS));
    for (name, on) in [("off", false), ("on", true)] {
        let mut config = scenario.config(PolicyKind::LsqSmart { p: 0.2 }, 0.9, 1);
        config.slots = SLOTS;
        config.warmup = 0;
        config.monitors.check_invariants = on;
        config.monitors.gaps = on;
        config.monitors.refresh_ages = on;
        group.bench_with_input(BenchmarkId::from_parameter(name), &config, |b, config| {
            b.iter(|| Simulation::new(config.clone()).unwrap().run_to_end().report.jobs_arrived)
        });
    }
    group.finish();
}

fn argmin(c: &mut Criterion) {
    let mut rng = stream_rng(1, Stream::Oracle(0));
    let distinct: Vec<u64> = (0..100).map(|_| rng.random_range(0..1000)).collect();
    let tied = vec![3u64; 100];
    let mut group = c.benchmark_group("pick_min");
    group.bench_function("distinct", |b| b.iter(|| pick_min(&distinct, &mut rng)));
    group.bench_function("all_tied", |b| b.iter(|| pick_min(&tied, &mut rng)));
    group.finish();
}

criterion_group!(benches, step_throughput, monitor_overhead, argmin);
criterion_main!(benches);
