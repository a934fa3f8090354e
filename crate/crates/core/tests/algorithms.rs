mod common;

use common::benchmark;
use proptest::prelude::*;
use svrpg::harness::trace_io::median;
use svrpg::{
    run, run_svrpg_observed, Algorithm, DivergencePolicy, Execution, Matrix, OracleMode, Problem, RunConfig,
    Termination,
};

fn problem() -> Problem {
    benchmark().problem().unwrap()
}

fn svrpg(epochs: usize) -> RunConfig {
    RunConfig::new(
        Algorithm::Svrpg {
            epochs,
            inner_steps: 4,
            outer_samples: 50,
            inner_samples: 25,
            outer_radius: 1e-4,
            inner_radius: 5e-2,
        },
        1e-4,
    )
}

#[test]
fn epoch_snapshot_is_last_inner_iterate() {
    let cfg = svrpg(6).with_seed(4);
    let mut steps: Vec<(u64, u64, Matrix, Matrix, Matrix)> = Vec::new();
    let trace = run_svrpg_observed(&problem(), &cfg, |s| {
        steps.push((s.epoch, s.inner_step, s.anchor_gain.clone(), s.gain.clone(), s.direction.clone()));
    })
    .unwrap();
    assert!(trace.is_completed());
    assert_eq!(steps.len(), 24);
    for w in steps.windows(2) {
        let (_, _, _, prev_gain, prev_dir) = &w[0];
        let (_, t, anchor, gain, _) = &w[1];
        let mut stepped = prev_gain.clone();
        stepped.axpy(-cfg.eta, prev_dir);
        assert_eq!(gain, &stepped);
        if *t == 0 {
            assert_eq!(anchor, gain);
        }
    }
}

#[test]
fn svrpg_median_gap_decreases_epoch_to_epoch() {
    let problem = problem();
    let traces: Vec<_> = (0..10).map(|s| run(&problem, &svrpg(125).with_seed(s)).unwrap()).collect();
    let mut prev = f64::INFINITY;
    for n in 0..=125u64 {
        let step = 4 * n;
        let mut gaps: Vec<f64> = traces
            .iter()
            .map(|t| t.records.iter().find(|r| r.global_step == step).unwrap().normalized_gap)
            .collect();
        let m = median(&mut gaps);
        assert!(m <= prev, "epoch {n}: {m} > {prev}");
        prev = m;
    }
}

#[test]
fn alternative_oracle_modes_complete() {
    let problem = problem();
    for mode in [OracleMode::SampledInitialState, OracleMode::FiniteHorizon { horizon: 200 }] {
        let mut cfg = svrpg(5).with_seed(2);
        cfg.oracle_mode = mode;
        let trace = run(&problem, &cfg).unwrap();
        assert!(trace.is_completed(), "{mode:?}: {:?}", trace.termination);
        assert_eq!(trace.ledger, cfg.algorithm.expected_ledger());
    }
}

/// Two-state system where a third of the radius-0.1 perturbations of `K₀`
/// are stabilizing on both sides: the first mode sits at 0.95 and only
/// `K₁ ± U₁` moves it.
fn risky() -> (Problem, RunConfig) {
    let m = |r: usize, c: usize, v: &[f64]| Matrix::from_row_slice(r, c, v).unwrap();
    let sys = svrpg::LinearQuadraticSystem::new(
        m(2, 2, &[1.2, 0.0, 0.0, 0.5]),
        m(2, 1, &[1.0, 0.0]),
        Matrix::identity(2),
        m(1, 1, &[1.0]),
        Matrix::identity(2),
    )
    .unwrap();
    let problem = Problem::new(sys, m(1, 2, &[0.25, 0.0]), vec![1.0, 1.0]).unwrap();
    let cfg = RunConfig::new(
        Algorithm::Zo2pPg {
            iterations: 3,
            samples: 20,
            radius: 0.1,
        },
        1e-6,
    );
    (problem, cfg)
}

#[test]
fn abort_policy_reports_oracle_failure() {
    let (problem, cfg) = risky();
    let trace = run(&problem, &cfg).unwrap();
    assert!(matches!(trace.termination, Termination::OracleFailure { step: 0, .. }));
    assert_eq!(trace.records.len(), 1);
}

#[test]
fn resample_policy_counts_failed_attempts() {
    let (problem, mut cfg) = risky();
    cfg.divergence_policy = DivergencePolicy::Resample { max_retries: 50 };
    let trace = run(&problem, &cfg).unwrap();
    assert!(trace.is_completed(), "{:?}", trace.termination);
    let nominal = cfg.algorithm.expected_ledger();
    assert!(trace.ledger.cost_evaluations() > nominal.cost_evaluations());
    assert_eq!(trace.ledger.one_point_queries(), 0);
    assert!(trace.ledger.identity_holds());
}

#[test]
fn penalty_policy_keeps_nominal_ledger() {
    let (problem, mut cfg) = risky();
    cfg.divergence_policy = DivergencePolicy::Penalty { value: 1e3 };
    let trace = run(&problem, &cfg).unwrap();
    assert!(trace.is_completed());
    assert_eq!(trace.ledger, cfg.algorithm.expected_ledger());
}

#[test]
fn penalty_below_initial_cost_is_rejected() {
    let (problem, mut cfg) = risky();
    cfg.divergence_policy = DivergencePolicy::Penalty { value: 1.0 };
    assert!(run(&problem, &cfg).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn traces_are_reproducible_and_schedule_free(seed in any::<u64>(), epochs in 0usize..4, record_every in 1usize..5) {
        let problem = problem();
        let mut cfg = svrpg(epochs).with_seed(seed);
        cfg.record_every = record_every;
        let a = run(&problem, &cfg).unwrap();
        let b = run(&problem, &cfg).unwrap();
        cfg.execution = Execution::Parallel;
        let c = run(&problem, &cfg).unwrap();
        prop_assert_eq!(&a.records, &b.records);
        prop_assert_eq!(&a.records, &c.records);
        prop_assert_eq!(&a.final_gain, &c.final_gain);
        prop_assert_eq!(a.ledger, cfg.algorithm.expected_ledger());
        prop_assert!(a.records.iter().all(|r| r.spectral_radius < 1.0));
        prop_assert!(a.records.windows(2).all(|w| w[0].cost_evaluations_cum <= w[1].cost_evaluations_cum));
    }

    #[test]
    fn zo2p_ledger_is_exact(iterations in 0usize..6, samples in 1usize..12, seed in any::<u64>()) {
        let cfg = RunConfig::new(Algorithm::Zo2pPg { iterations, samples, radius: 1e-4 }, 1e-4).with_seed(seed);
        let trace = run(&problem(), &cfg).unwrap();
        prop_assert_eq!(trace.ledger.cost_evaluations(), 2 * (iterations * samples) as u64);
        prop_assert_eq!(trace.ledger.two_point_queries(), (iterations * samples) as u64);
        let last = trace.records.last().unwrap();
        prop_assert_eq!(last.cost_evaluations_cum, trace.ledger.cost_evaluations());
    }
}
