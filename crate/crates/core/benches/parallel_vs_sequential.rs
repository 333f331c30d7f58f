//! Hot paths timed on a one-thread pool and on the full pool.
//!
//! With default features the one-thread pool is the sequential baseline for
//! the rayon code; `cargo bench --no-default-features` times the sequential
//! fallback itself.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use jointinf_core::uft::{batch_gradient, EncoderKind, TaskEncoder, TrainConfig};
use jointinf_core::uicl::{relabel_turn, ModelSampler, TurnState, UiclConfig};
use jointinf_core::*;

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let all = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let mut sizes = vec![1];
    if all > 1 {
        sizes.push(all);
    }
    sizes
        .into_iter()
        .map(|n| (format!("threads={n}"), rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()))
        .collect()
}

fn mode() -> &'static str {
    if cfg!(feature = "parallel") {
        "parallel"
    } else {
        "sequential"
    }
}

fn bench_exact_objective(c: &mut Criterion) {
    let (ds, model) = Fixture::OracleM12.load().unwrap();
    let scorer = model.scorer(&ds.instances).unwrap();
    let labeling = Labeling(ds.gold.clone().unwrap());
    let mut group = c.benchmark_group(format!("{}/exact_objective_m12_n4", mode()));
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| exact_joint_objective(&scorer, &labeling, 4, u128::MAX).unwrap()))
        });
    }
    group.finish();
}

fn bench_brute_force(c: &mut Criterion) {
    let (ds, model) = Fixture::OracleM8.load().unwrap();
    let scorer = model.scorer(&ds.instances).unwrap();
    let mut group = c.benchmark_group(format!("{}/brute_force_m8_n3", mode()));
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| brute_force_argmax(&scorer, &SolverConfig::new(3)).unwrap()))
        });
    }
    group.finish();
}

fn bench_batch_gradient(c: &mut Criterion) {
    let (ds, model) = Fixture::Reference.load().unwrap();
    let scorer = model.scorer(&ds.instances).unwrap();
    let enc = TaskEncoder::new(&scorer, &ds.instances).unwrap();
    let params = enc.init_params(EncoderKind::Tabular).unwrap();
    let cfg = TrainConfig::default();
    let mut group = c.benchmark_group(format!("{}/uft_batch_gradient_b64_n16", mode()));
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| batch_gradient(&scorer, &enc, &params, &cfg, 0).unwrap()))
        });
    }
    group.finish();
}

fn bench_uicl_turn(c: &mut Criterion) {
    let (ds, model) = Fixture::Reference.load().unwrap();
    let sampler = ModelSampler::new(&model, &ds.answer_set);
    let pool_state = TurnState::from_answers(&ds, ds.gold.as_ref().unwrap());
    let cfg = UiclConfig::default();
    let mut group = c.benchmark_group(format!("{}/uicl_turn_m64_n8", mode()));
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            pool.install(|| b.iter(|| relabel_turn(&sampler, &ds, &pool_state, &cfg, 1).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_exact_objective, bench_brute_force, bench_batch_gradient, bench_uicl_turn);
criterion_main!(benches);
