mod common;

use common::benchmark;
use svrpg::diagnostics::{
    finite_difference_gradient, gradient_domination_probe, lipschitz_probe, second_moment_probe,
    variance_reduction_probe, VarianceProbeParams,
};
use svrpg::Execution;

const BENCHMARK_INNER_LOOP: VarianceProbeParams = VarianceProbeParams {
    outer_samples: 50,
    inner_samples: 25,
    outer_radius: 1e-4,
    inner_radius: 5e-2,
};

#[test]
fn control_variate_reduces_variance_near_snapshot() {
    let loaded = benchmark();
    let report = variance_reduction_probe(
        &loaded.system,
        &loaded.k0,
        1e-3,
        BENCHMARK_INNER_LOOP,
        1_000,
        17,
        Execution::best_available(),
    )
    .unwrap();
    assert!(report.get("variance_ratio").unwrap() < 1.0, "{report:?}");
}

#[test]
fn zero_displacement_variance_is_anchor_variance() {
    let loaded = benchmark();
    let report =
        variance_reduction_probe(&loaded.system, &loaded.k0, 0.0, BENCHMARK_INNER_LOOP, 200, 3, Execution::Sequential)
            .unwrap();
    assert_eq!(report.get("variance_svrpg"), report.get("variance_anchor"));
}

#[test]
fn gradient_domination_constant_is_positive_on_benchmark() {
    let loaded = benchmark();
    let problem = loaded.problem().unwrap();
    let report = gradient_domination_probe(&loaded.system, problem.optimal_gain(), &loaded.k0, 500, 2).unwrap();
    let lambda = report.get("lambda_hat").unwrap();
    assert!(lambda > 0.0 && lambda.is_finite());
    assert_eq!(report.sample_count, 500);
}

#[test]
fn probes_are_reproducible() {
    let loaded = benchmark();
    let a = lipschitz_probe(&loaded.system, &loaded.k0, 1e-3, 200, 6).unwrap();
    let b = lipschitz_probe(&loaded.system, &loaded.k0, 1e-3, 200, 6).unwrap();
    assert_eq!(a, b);
    assert!(a.get("max_ratio").unwrap().is_finite());
    let s = second_moment_probe(&loaded.system, &loaded.k0, 1e-3, 2_000, 6, Execution::Parallel).unwrap();
    let t = second_moment_probe(&loaded.system, &loaded.k0, 1e-3, 2_000, 6, Execution::Sequential).unwrap();
    assert_eq!(s, t);
    assert!(s.get("ratio").unwrap().is_finite());
}

#[test]
fn finite_differences_vanish_at_optimum() {
    let loaded = benchmark();
    let problem = loaded.problem().unwrap();
    let fd = finite_difference_gradient(&loaded.system, problem.optimal_gain(), 1e-6).unwrap();
    assert!(fd.frobenius_norm() <= 1e-6, "{}", fd.frobenius_norm());
}
