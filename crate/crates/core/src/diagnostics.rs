//! Independent checks and Monte-Carlo probes for the estimators and the
//! landscape properties the optimizers rely on.
//!
//! All probes are reproducible bitwise from their arguments and seed.
//! Repeats inside a probe use per-repeat substreams and may run in parallel.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::Matrix;
use crate::lqr::LinearQuadraticSystem;
use crate::oracle::{CostOracle, LqrOracle, QueryLedger};
use crate::rng::SampleStreams;
use crate::zeroth_order::{sample_sphere, zo1p_estimate, zo1p_pair_estimate, zo1p_terms, zo2p_estimate, zo2p_terms};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub name: String,
    pub scalars: BTreeMap<String, f64>,
    pub sample_count: u64,
    pub seed: u64,
}

impl ProbeReport {
    fn new(name: &str, sample_count: u64, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            scalars: BTreeMap::new(),
            sample_count,
            seed,
        }
    }

    fn set(&mut self, key: &str, value: f64) {
        self.scalars.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.scalars.get(key).copied()
    }

    fn finish(self) -> Result<Self> {
        if let Some((k, v)) = self.scalars.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!("probe {} produced {k} = {v}", self.name)));
        }
        Ok(self)
    }
}

/// Entrywise sample mean and (unbiased) variance of a set of matrices.
#[derive(Clone, Debug)]
pub struct EntrywiseStats {
    pub count: usize,
    pub mean: Matrix,
    pub variance: Matrix,
}

impl EntrywiseStats {
    pub fn from_samples(samples: &[Matrix]) -> Self {
        assert!(samples.len() >= 2, "need at least two samples");
        let (rows, cols) = samples[0].shape();
        let n = samples.len() as f64;
        let mut mean = Matrix::zeros(rows, cols);
        for s in samples {
            mean += s;
        }
        let mean = mean.scale(1.0 / n);
        let mut variance = Matrix::zeros(rows, cols);
        for s in samples {
            let d = s - &mean;
            for (v, e) in variance.as_mut_slice().iter_mut().zip(d.as_slice()) {
                *v += e * e;
            }
        }
        let variance = variance.scale(1.0 / (n - 1.0));
        Self {
            count: samples.len(),
            mean,
            variance,
        }
    }

    /// `tr Var`, the summed entrywise variance.
    pub fn total_variance(&self) -> f64 {
        self.variance.as_slice().iter().sum()
    }

    /// Frobenius norm of the standard error of the mean.
    pub fn standard_error_norm(&self) -> f64 {
        (self.total_variance() / self.count as f64).sqrt()
    }

    pub fn standard_error(&self) -> Matrix {
        self.variance.map(|v| (v / self.count as f64).sqrt())
    }
}

/// Central differences `(C(K + hE_ij) − C(K − hE_ij)) / 2h` of the exact cost.
pub fn finite_difference_gradient(sys: &LinearQuadraticSystem, k: &Matrix, h: f64) -> Result<Matrix> {
    sys.check_gain(k)?;
    if !(h > 0.0) {
        return Err(Error::InvalidConfig("finite-difference step must be positive".into()));
    }
    let (rows, cols) = k.shape();
    let mut grad = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let mut plus = k.clone();
            plus[(i, j)] += h;
            let mut minus = k.clone();
            minus[(i, j)] -= h;
            grad[(i, j)] = (sys.cost(&plus)? - sys.cost(&minus)?) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// Measures `‖mean of m single-sample estimates − ∇C(K)‖_F` for ZO1P and ZO2P
/// against a known gradient, with the Monte-Carlo standard error of each mean.
pub fn estimator_bias_probe_with<O: CostOracle + ?Sized>(
    oracle: &O,
    k: &Matrix,
    true_gradient: &Matrix,
    radius: f64,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<ProbeReport> {
    let mut ledger = QueryLedger::new();
    let two = zo2p_terms(oracle, k, radius, samples, &SampleStreams::new(seed, 0), exec, &mut ledger)?;
    let one = zo1p_terms(oracle, k, radius, samples, &SampleStreams::new(seed, 1), exec, &mut ledger)?;
    let two = EntrywiseStats::from_samples(&two);
    let one = EntrywiseStats::from_samples(&one);
    let mut report = ProbeReport::new("estimator_bias", samples as u64, seed);
    report.set("radius", radius);
    report.set("bias_norm_zo2p", (&two.mean - true_gradient).frobenius_norm());
    report.set("bias_norm_zo1p", (&one.mean - true_gradient).frobenius_norm());
    report.set("stderr_zo2p", two.standard_error_norm());
    report.set("stderr_zo1p", one.standard_error_norm());
    report.set("gradient_norm", true_gradient.frobenius_norm());
    report.finish()
}

/// [`estimator_bias_probe_with`] on the exact LQR oracle at `K`.
pub fn estimator_bias_probe(
    sys: &LinearQuadraticSystem,
    k: &Matrix,
    radius: f64,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<ProbeReport> {
    let grad = sys.exact_gradient(k)?;
    estimator_bias_probe_with(&LqrOracle::exact(sys), k, &grad, radius, samples, seed, exec)
}

/// Compares independent ZO1P and ZO2P Monte-Carlo means entrywise; reports
/// the largest `|mean₁ − mean₂| / √(se₁² + se₂²)` as `max_z`.
pub fn mean_equality_probe<O: CostOracle + ?Sized>(
    oracle: &O,
    k: &Matrix,
    radius: f64,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<ProbeReport> {
    let mut ledger = QueryLedger::new();
    let two = zo2p_terms(oracle, k, radius, samples, &SampleStreams::new(seed, 0), exec, &mut ledger)?;
    let one = zo1p_terms(oracle, k, radius, samples, &SampleStreams::new(seed, 1), exec, &mut ledger)?;
    let two = EntrywiseStats::from_samples(&two);
    let one = EntrywiseStats::from_samples(&one);
    let (se1, se2) = (one.standard_error(), two.standard_error());
    let max_z = (0..one.mean.as_slice().len())
        .map(|i| {
            let diff = (one.mean.as_slice()[i] - two.mean.as_slice()[i]).abs();
            let se = se1.as_slice()[i].hypot(se2.as_slice()[i]);
            if se == 0.0 {
                if diff == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                diff / se
            }
        })
        .fold(0.0, f64::max);
    let mut report = ProbeReport::new("mean_equality", samples as u64, seed);
    report.set("radius", radius);
    report.set("max_z", max_z);
    report.set("mean_diff_norm", (&one.mean - &two.mean).frobenius_norm());
    report.set("stderr_zo1p", one.standard_error_norm());
    report.set("stderr_zo2p", two.standard_error_norm());
    report.finish()
}

/// Second moment of single-sample ZO2P estimates against the surrogate bound
/// `8d²·bias² + 2d²‖∇C(K)‖²`, with the bias measured on the same samples.
pub fn second_moment_probe(
    sys: &LinearQuadraticSystem,
    k: &Matrix,
    radius: f64,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<ProbeReport> {
    let grad = sys.exact_gradient(k)?;
    let oracle = LqrOracle::exact(sys);
    let mut ledger = QueryLedger::new();
    let terms = zo2p_terms(&oracle, k, radius, samples, &SampleStreams::new(seed, 0), exec, &mut ledger)?;
    let stats = EntrywiseStats::from_samples(&terms);
    let second_moment = terms.iter().map(|t| t.frobenius_dot(t)).sum::<f64>() / terms.len() as f64;
    let d = sys.gain_dim() as f64;
    let bias = (&stats.mean - &grad).frobenius_norm();
    let bound = 8.0 * d * d * bias * bias + 2.0 * d * d * grad.frobenius_dot(&grad);
    let mut report = ProbeReport::new("second_moment", samples as u64, seed);
    report.set("radius", radius);
    report.set("second_moment", second_moment);
    report.set("bound", bound);
    report.set("ratio", second_moment / bound);
    report.finish()
}

/// Estimates the gradient-domination constant over random stabilizing gains
/// in `{C(K) ≤ C(K₀)}`.
///
/// Proposals are `K* + s(K₀ − K*) + o·‖K₀ − K*‖_F·Z/‖Z‖_F` with `s ~ U(0,1)`,
/// `o ~ U(0, ½)` and `Z` Gaussian. At most `10 · grid_size` proposals are
/// made; fewer than `grid_size` acceptances is a degenerate sublevel set.
pub fn gradient_domination_probe(
    sys: &LinearQuadraticSystem,
    kstar: &Matrix,
    k0: &Matrix,
    grid_size: usize,
    seed: u64,
) -> Result<ProbeReport> {
    let c0 = sys.cost(k0)?;
    let cstar = sys.cost(kstar)?;
    let segment = k0 - kstar;
    let spread = segment.frobenius_norm();
    let (rows, cols) = kstar.shape();
    let mut rng = SampleStreams::new(seed, 0).stream(0);
    let max_proposals = 10 * grid_size.max(1);
    let (mut accepted, mut proposed) = (0usize, 0usize);
    let mut lambda_hat = f64::INFINITY;
    let mut ratio_max: f64 = 0.0;
    let mut used = 0usize;
    while accepted < grid_size && proposed < max_proposals {
        proposed += 1;
        let s: f64 = rng.random();
        let o: f64 = rng.random::<f64>() * 0.5 * spread;
        let offset = sample_sphere(rows, cols, 1.0, &mut rng).into_matrix();
        let mut k = kstar.clone();
        k.axpy(s, &segment);
        k.axpy(o, &offset);
        if !sys.is_stabilizing(&k)? {
            continue;
        }
        let c = sys.cost(&k)?;
        if c > c0 {
            continue;
        }
        accepted += 1;
        let gap = c - cstar;
        if gap <= 1e-12 {
            continue;
        }
        let g = sys.exact_gradient(&k)?;
        let ratio = g.frobenius_dot(&g) / gap;
        lambda_hat = lambda_hat.min(ratio);
        ratio_max = ratio_max.max(ratio);
        used += 1;
    }
    if accepted < grid_size || used == 0 {
        return Err(Error::DegenerateSublevel { accepted, proposed });
    }
    let mut report = ProbeReport::new("gradient_domination", used as u64, seed);
    report.set("lambda_hat", lambda_hat);
    report.set("ratio_max", ratio_max);
    report.set("acceptance_rate", accepted as f64 / proposed as f64);
    report.finish()
}

/// Empirical local Lipschitz ratio `|C(K+δ) − C(K)| / ‖δ‖_F` for random
/// `‖δ‖_F ≤ max_step`, also normalized by `C(K)`.
pub fn lipschitz_probe(
    sys: &LinearQuadraticSystem,
    k: &Matrix,
    max_step: f64,
    pairs: usize,
    seed: u64,
) -> Result<ProbeReport> {
    let c = sys.cost(k)?;
    let (rows, cols) = k.shape();
    let mut rng = SampleStreams::new(seed, 0).stream(0);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let step = max_step * rng.random::<f64>().max(1e-3);
        let delta = sample_sphere(rows, cols, step, &mut rng).into_matrix();
        let c2 = sys.cost(&(k + &delta))?;
        worst = worst.max((c2 - c).abs() / step);
    }
    let mut report = ProbeReport::new("lipschitz", pairs as u64, seed);
    report.set("max_ratio", worst);
    report.set("max_ratio_over_cost", worst / c);
    report.finish()
}

/// Sample sizes and radii of the SVRPG direction being probed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceProbeParams {
    pub outer_samples: usize,
    pub inner_samples: usize,
    pub outer_radius: f64,
    pub inner_radius: f64,
}

/// Compares `tr Var(v)` for `v = μ̃ + ∇̄C(K) − ∇̄C(K̃)` (shared samples) with
/// `tr Var` of plain ZO1P at `K = K̃ + δ`, `‖δ‖_F = displacement`.
pub fn variance_reduction_probe_with<O: CostOracle + ?Sized>(
    oracle: &O,
    k_anchor: &Matrix,
    displacement: f64,
    params: VarianceProbeParams,
    repeats: usize,
    seed: u64,
    exec: Execution,
) -> Result<ProbeReport> {
    if repeats < 2 {
        return Err(Error::InvalidConfig("variance probe needs at least two repeats".into()));
    }
    let (rows, cols) = k_anchor.shape();
    let mut k = k_anchor.clone();
    if displacement > 0.0 {
        let delta = sample_sphere(rows, cols, displacement, &mut SampleStreams::new(seed, 0).stream(0));
        k += delta.matrix();
    }
    let results = exec.map_indexed(repeats, |j| -> Result<(Matrix, Matrix, Matrix)> {
        let block = 1 + 3 * j as u64;
        let mut ledger = QueryLedger::new();
        let mu = zo2p_estimate(
            oracle,
            k_anchor,
            params.outer_radius,
            params.outer_samples,
            &SampleStreams::new(seed, block),
            Execution::Sequential,
            &mut ledger,
        )?
        .gradient;
        let (current, anchor) = zo1p_pair_estimate(
            oracle,
            &k,
            k_anchor,
            params.inner_radius,
            params.inner_samples,
            &SampleStreams::new(seed, block + 1),
            Execution::Sequential,
            &mut ledger,
        )?;
        let v = &mu + &(&current.gradient - &anchor.gradient);
        let plain = zo1p_estimate(
            oracle,
            &k,
            params.inner_radius,
            params.inner_samples,
            &SampleStreams::new(seed, block + 2),
            Execution::Sequential,
            &mut ledger,
        )?
        .gradient;
        Ok((v, plain, mu))
    });
    let mut vs = Vec::with_capacity(repeats);
    let mut plains = Vec::with_capacity(repeats);
    let mut mus = Vec::with_capacity(repeats);
    for r in results {
        let (v, p, m) = r?;
        vs.push(v);
        plains.push(p);
        mus.push(m);
    }
    let var_v = EntrywiseStats::from_samples(&vs).total_variance();
    let var_plain = EntrywiseStats::from_samples(&plains).total_variance();
    let var_anchor = EntrywiseStats::from_samples(&mus).total_variance();
    let mut report = ProbeReport::new("variance_reduction", repeats as u64, seed);
    report.set("displacement", displacement);
    report.set("variance_svrpg", var_v);
    report.set("variance_zo1p", var_plain);
    report.set("variance_anchor", var_anchor);
    report.set("variance_ratio", if var_plain > 0.0 { var_v / var_plain } else { 0.0 });
    report.finish()
}

/// [`variance_reduction_probe_with`] on the exact LQR oracle.
pub fn variance_reduction_probe(
    sys: &LinearQuadraticSystem,
    k_anchor: &Matrix,
    displacement: f64,
    params: VarianceProbeParams,
    repeats: usize,
    seed: u64,
    exec: Execution,
) -> Result<ProbeReport> {
    if !sys.is_stabilizing(k_anchor)? {
        return Err(Error::UnstableGain {
            spectral_radius: sys.closed_loop_radius(k_anchor)?,
        });
    }
    variance_reduction_probe_with(&LqrOracle::exact(sys), k_anchor, displacement, params, repeats, seed, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SampleRng;

    fn scalar_sys() -> LinearQuadraticSystem {
        let s = |v: f64| Matrix::from_row_slice(1, 1, &[v]).unwrap();
        LinearQuadraticSystem::new(s(0.5), s(1.0), s(1.0), s(1.0), s(1.0)).unwrap()
    }

    struct Affine {
        slope: Matrix,
        offset: f64,
    }

    impl CostOracle for Affine {
        fn gain_shape(&self) -> (usize, usize) {
            self.slope.shape()
        }

        fn evaluate(&self, k: &Matrix, _rng: &mut SampleRng) -> Result<f64> {
            Ok(self.slope.frobenius_dot(k) + self.offset)
        }
    }

    #[test]
    fn finite_difference_scalar() {
        let sys = scalar_sys();
        let k = Matrix::from_row_slice(1, 1, &[0.2]).unwrap();
        let g = finite_difference_gradient(&sys, &k, 1e-7).unwrap();
        assert!((g[(0, 0)] + 0.31397).abs() < 1e-5);
    }

    #[test]
    fn finite_difference_reports_unstable_perturbation() {
        let sys = scalar_sys();
        let k = Matrix::from_row_slice(1, 1, &[1.49]).unwrap();
        assert!(matches!(
            finite_difference_gradient(&sys, &k, 0.1),
            Err(Error::UnstableGain { .. })
        ));
    }

    #[test]
    fn constant_objective_zo2p_bias_is_zero() {
        let oracle = Affine {
            slope: Matrix::zeros(1, 3),
            offset: 4.0,
        };
        let k = Matrix::zeros(1, 3);
        let report =
            estimator_bias_probe_with(&oracle, &k, &Matrix::zeros(1, 3), 0.1, 200, 3, Execution::Sequential).unwrap();
        assert_eq!(report.get("bias_norm_zo2p"), Some(0.0));
    }

    #[test]
    fn variance_probe_without_displacement_is_anchor_variance() {
        let sys = scalar_sys();
        let k = Matrix::from_row_slice(1, 1, &[0.2]).unwrap();
        let params = VarianceProbeParams {
            outer_samples: 5,
            inner_samples: 3,
            outer_radius: 1e-3,
            inner_radius: 1e-2,
        };
        let report = variance_reduction_probe(&sys, &k, 0.0, params, 50, 9, Execution::Sequential).unwrap();
        assert_eq!(report.get("variance_svrpg"), report.get("variance_anchor"));
    }

    #[test]
    fn variance_probe_constant_objective_has_zero_numerator() {
        let oracle = Affine {
            slope: Matrix::zeros(1, 2),
            offset: 1.0,
        };
        let params = VarianceProbeParams {
            outer_samples: 4,
            inner_samples: 4,
            outer_radius: 0.1,
            inner_radius: 0.1,
        };
        let report =
            variance_reduction_probe_with(&oracle, &Matrix::zeros(1, 2), 0.3, params, 20, 1, Execution::Sequential)
                .unwrap();
        assert_eq!(report.get("variance_svrpg"), Some(0.0));
        assert_eq!(report.get("variance_ratio"), Some(0.0));
    }

    #[test]
    fn gradient_domination_scalar_scan() {
        // closed-form scan over k in [-0.2, 0.8] with a=0.5, b=q=r=1:
        // the ratio g(k)²/(C(k) − C*) stays bounded away from zero.
        let sys = scalar_sys();
        let (_, kstar) = sys.optimal_gain().unwrap();
        let k0 = Matrix::from_row_slice(1, 1, &[0.8]).unwrap();
        let report = gradient_domination_probe(&sys, &kstar, &k0, 200, 4).unwrap();
        let lambda = report.get("lambda_hat").unwrap();
        assert!(lambda > 0.0 && lambda.is_finite());
    }

    #[test]
    fn probe_report_json_shape() {
        let mut r = ProbeReport::new("x", 10, 2);
        r.set("a", 1.5);
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["name"], "x");
        assert_eq!(json["scalars"]["a"], 1.5);
        assert_eq!(json["sample_count"], 10);
        assert_eq!(json["seed"], 2);
    }
}
