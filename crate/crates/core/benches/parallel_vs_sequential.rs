use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spanner_cb::oracles::{ActionSet, Context, FiniteActionSet, RidgeRegressor};
use spanner_cb::policies::PolicySpec;
use spanner_cb::reweighted::{igw_argmax, GridSpec, ReweightingContext};
use spanner_cb::simulator::{bootstrap_ci, make_linear_env, run_episode, sweep, EnvSpec};
use spanner_cb::spanner::local_search_init;
use spanner_cb::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn ball_set(n: usize, d: usize, seed: u64) -> FiniteActionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
            v.iter().map(|x| x / norm).collect()
        })
        .collect();
    FiniteActionSet::from_embeddings(rows).unwrap()
}

fn argmax(c: &mut Criterion) {
    let mut group = c.benchmark_group("argmax");
    let x = Context::new(0, vec![]);
    for &n in &[10_000usize, 200_000] {
        let base = ball_set(n, 32, 1);
        let theta: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
        for (name, exec) in MODES {
            let set = base.clone().with_execution(exec);
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| set.argmax(&x, black_box(&theta)).unwrap())
            });
        }
    }
    group.finish();
}

fn line_search(c: &mut Criterion) {
    let mut group = c.benchmark_group("igw_argmax");
    let x = Context::new(0, vec![]);
    let set = ball_set(5_000, 10, 2);
    let ghat: Vec<f64> = (0..10).map(|i| 0.3 * (i as f64).cos()).collect();
    let rc = ReweightingContext::new(&set, &x, ghat, 10.0).unwrap();
    let (_, r) = local_search_init(&set, &x).unwrap();
    let grid = GridSpec::new(10, 10.0, r, 1.0).unwrap();
    let theta: Vec<f64> = (0..10).map(|i| 0.2 * (i as f64 * 1.3).sin()).collect();
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| igw_argmax(&rc, black_box(&theta), &grid, &set, &x, exec).unwrap())
        });
    }
    group.finish();
}

fn seed_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("seed_sweep");
    group.sample_size(10);
    let env = make_linear_env(EnvSpec::new(5, 100, 3)).unwrap();
    let policy = PolicySpec::SpannerIgw {
        gamma: 100.0,
        factor: 2.0,
        practical: false,
    };
    let seeds: Vec<u64> = (0..8).collect();
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| {
                sweep(&seeds, exec, |seed| {
                    let mut p = policy.build()?;
                    let mut reg = RidgeRegressor::new(5, 1.0)?;
                    Ok(run_episode(&env, p.as_mut(), &mut reg, 200, seed)?.cumulative_true_regret)
                })
                .unwrap()
            })
        });
    }
    group.finish();
}

fn bootstrap(c: &mut Criterion) {
    let values: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.713).sin()).collect();
    c.bench_function("bootstrap_ci_2000", |b| b.iter(|| bootstrap_ci(black_box(&values), 0.9, 2000, 7).unwrap()));
}

criterion_group!(benches, argmax, line_search, seed_sweep, bootstrap);
criterion_main!(benches);
