use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use svrpg::harness::load_system;
use svrpg::rng::SampleStreams;
use svrpg::{run, zo2p_estimate, Algorithm, Execution, LqrOracle, Problem, QueryLedger, RunConfig};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn problem() -> Problem {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../benchmarks/appendix_g.json");
    load_system(path).unwrap().problem().unwrap()
}

fn estimator(c: &mut Criterion) {
    let problem = problem();
    let oracle = LqrOracle::exact(problem.system());
    let mut group = c.benchmark_group("zo2p_estimate");
    for samples in [1_000usize, 10_000] {
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, samples), &samples, |b, &m| {
                let streams = SampleStreams::new(1, 0);
                b.iter(|| {
                    let mut ledger = QueryLedger::new();
                    zo2p_estimate(&oracle, problem.initial_gain(), 1e-4, m, &streams, exec, &mut ledger).unwrap()
                })
            });
        }
    }
    group.finish();
}

fn seed_sweep(c: &mut Criterion) {
    let problem = problem();
    let cfg = RunConfig::new(
        Algorithm::Svrpg {
            epochs: 25,
            inner_steps: 4,
            outer_samples: 50,
            inner_samples: 25,
            outer_radius: 1e-4,
            inner_radius: 5e-2,
        },
        1e-4,
    );
    let mut group = c.benchmark_group("svrpg_seed_sweep");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, 8), |b| {
            b.iter(|| exec.map_indexed(8, |s| run(&problem, &cfg.clone().with_seed(s as u64)).unwrap()))
        });
    }
    group.finish();
}

fn inner_parallel_run(c: &mut Criterion) {
    let problem = problem();
    let mut group = c.benchmark_group("zo2p_pg_run");
    group.sample_size(10);
    for (name, exec) in MODES {
        let mut cfg = RunConfig::new(
            Algorithm::Zo2pPg {
                iterations: 50,
                samples: 50,
                radius: 1e-4,
            },
            1e-4,
        );
        cfg.execution = exec;
        group.bench_function(name, |b| b.iter(|| run(black_box(&problem), &cfg).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, estimator, seed_sweep, inner_parallel_run);
criterion_main!(benches);
