//! Frobenius-sphere smoothing and the one-point / two-point zeroth-order
//! gradient estimators.
//!
//! Every sample `i` of an estimator call draws its perturbation (and any
//! oracle randomness) from substream `i` of the call's [`SampleStreams`], so
//! sequential and parallel execution give bitwise identical estimates. In
//! stochastic oracle modes the evaluations that make up one sample (`K ± U`,
//! or `K + U` and `K̃ + U`) share the same initial-state draw.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::Matrix;
use crate::oracle::{CostOracle, DivergencePolicy, QueryLedger};
use crate::rng::{SampleRng, SampleStreams};

/// A matrix drawn uniformly from the Frobenius sphere of radius `radius`.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    matrix: Matrix,
    radius: f64,
}

impl Perturbation {
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }
}

/// `U = r · Z / ‖Z‖_F` with `Z` i.i.d. standard normal.
pub fn sample_sphere(rows: usize, cols: usize, radius: f64, rng: &mut SampleRng) -> Perturbation {
    assert!(radius > 0.0, "smoothing radius must be positive");
    loop {
        let z = Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
        let norm = z.frobenius_norm();
        if norm >= 1e-300 {
            return Perturbation {
                matrix: z.scale(radius / norm),
                radius,
            };
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Zo1p,
    Zo2p,
    SvrpgDirection,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub gradient: Matrix,
    pub kind: EstimatorKind,
    pub samples: usize,
    pub radius: f64,
    /// Ledger delta consumed by this estimate.
    pub queries: QueryLedger,
}

fn check_args<O: CostOracle + ?Sized>(oracle: &O, k: &Matrix, radius: f64, samples: usize) -> Result<()> {
    if k.shape() != oracle.gain_shape() {
        return Err(Error::DimensionMismatch {
            context: "estimator gain",
            left: oracle.gain_shape(),
            right: k.shape(),
        });
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidConfig(format!("smoothing radius must be positive, got {radius}")));
    }
    if samples == 0 {
        return Err(Error::InvalidConfig("sample count must be at least 1".into()));
    }
    Ok(())
}

/// Runs `attempt` until it succeeds, fails with something other than a
/// destabilized query, or the policy's retry budget is spent.
fn with_retries<T>(policy: DivergencePolicy, mut attempt: impl FnMut() -> Result<T>) -> Result<T> {
    let mut left = policy.retries();
    loop {
        match attempt() {
            Err(Error::DestabilizedQuery { .. }) if left > 0 => left -= 1,
            other => return other,
        }
    }
}

/// Collects per-sample results in index order; ledgers are merged even when
/// a sample failed, and the lowest-index error wins.
fn gather<T>(
    results: Vec<(Result<T>, QueryLedger)>,
    ledger: &mut QueryLedger,
    pairs: bool,
) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(results.len());
    let mut first_err = None;
    for (res, scratch) in results {
        if pairs {
            ledger.absorb_as_pairs(&scratch);
        } else {
            *ledger += &scratch;
        }
        match res {
            Ok(v) => out.push(v),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

fn mean(terms: &[Matrix]) -> Matrix {
    let mut acc = Matrix::zeros(terms[0].rows(), terms[0].cols());
    for t in terms {
        acc += t;
    }
    acc.scale(1.0 / terms.len() as f64)
}

/// Single-sample ZO1P terms `d·C(K+Uᵢ)·Uᵢ / r²`, in sample order.
pub fn zo1p_terms<O: CostOracle + ?Sized>(
    oracle: &O,
    k: &Matrix,
    radius: f64,
    samples: usize,
    streams: &SampleStreams,
    exec: Execution,
    ledger: &mut QueryLedger,
) -> Result<Vec<Matrix>> {
    check_args(oracle, k, radius, samples)?;
    let (rows, cols) = k.shape();
    let coeff = (rows * cols) as f64 / (radius * radius);
    let policy = oracle.divergence_policy();
    let results = exec.map_indexed(samples, |i| {
        let mut rng = streams.stream(i as u64);
        let mut scratch = QueryLedger::new();
        let term = with_retries(policy, || {
            let u = sample_sphere(rows, cols, radius, &mut rng).into_matrix();
            let c = oracle.query(&(k + &u), &mut rng, &mut scratch)?;
            Ok(u.scale(coeff * c))
        });
        (term, scratch)
    });
    gather(results, ledger, false)
}

/// Single-sample ZO2P terms `d·(C(K+Uᵢ) − C(K−Uᵢ))·Uᵢ / (2r²)`.
pub fn zo2p_terms<O: CostOracle + ?Sized>(
    oracle: &O,
    k: &Matrix,
    radius: f64,
    samples: usize,
    streams: &SampleStreams,
    exec: Execution,
    ledger: &mut QueryLedger,
) -> Result<Vec<Matrix>> {
    check_args(oracle, k, radius, samples)?;
    let (rows, cols) = k.shape();
    let coeff = (rows * cols) as f64 / (2.0 * radius * radius);
    let policy = oracle.divergence_policy();
    let results = exec.map_indexed(samples, |i| {
        let mut rng = streams.stream(i as u64);
        let mut scratch = QueryLedger::new();
        let term = with_retries(policy, || {
            let u = sample_sphere(rows, cols, radius, &mut rng).into_matrix();
            let mut rng_plus = rng.clone();
            let plus = oracle.query(&(k + &u), &mut rng_plus, &mut scratch);
            let minus = oracle.query(&(k - &u), &mut rng, &mut scratch);
            let diff = plus? - minus?;
            Ok(u.scale(coeff * diff))
        });
        (term, scratch)
    });
    gather(results, ledger, true)
}

/// Single-sample ZO1P terms at `K` and `K̃` built from one shared set of
/// perturbations.
pub fn zo1p_pair_terms<O: CostOracle + ?Sized>(
    oracle: &O,
    k: &Matrix,
    k_anchor: &Matrix,
    radius: f64,
    samples: usize,
    streams: &SampleStreams,
    exec: Execution,
    ledger: &mut QueryLedger,
) -> Result<Vec<(Matrix, Matrix)>> {
    check_args(oracle, k, radius, samples)?;
    check_args(oracle, k_anchor, radius, samples)?;
    let (rows, cols) = k.shape();
    let coeff = (rows * cols) as f64 / (radius * radius);
    let policy = oracle.divergence_policy();
    let results = exec.map_indexed(samples, |i| {
        let mut rng = streams.stream(i as u64);
        let mut scratch = QueryLedger::new();
        let terms = with_retries(policy, || {
            let u = sample_sphere(rows, cols, radius, &mut rng).into_matrix();
            let mut rng_current = rng.clone();
            let at_current = oracle.query(&(k + &u), &mut rng_current, &mut scratch);
            let at_anchor = oracle.query(&(k_anchor + &u), &mut rng, &mut scratch);
            Ok((u.scale(coeff * at_current?), u.scale(coeff * at_anchor?)))
        });
        (terms, scratch)
    });
    gather(results, ledger, false)
}

/// One-point estimate `(d / (m r²)) Σᵢ C(K+Uᵢ) Uᵢ`; `m` one-point queries.
pub fn zo1p_estimate<O: CostOracle + ?Sized>(
    oracle: &O,
    k: &Matrix,
    radius: f64,
    samples: usize,
    streams: &SampleStreams,
    exec: Execution,
    ledger: &mut QueryLedger,
) -> Result<GradientEstimate> {
    let before = *ledger;
    let terms = zo1p_terms(oracle, k, radius, samples, streams, exec, ledger)?;
    Ok(GradientEstimate {
        gradient: mean(&terms),
        kind: EstimatorKind::Zo1p,
        samples,
        radius,
        queries: ledger.since(&before),
    })
}

/// Two-point estimate `(d / (2 m r²)) Σᵢ (C(K+Uᵢ) − C(K−Uᵢ)) Uᵢ`; `m`
/// two-point queries (`2m` evaluations).
pub fn zo2p_estimate<O: CostOracle + ?Sized>(
    oracle: &O,
    k: &Matrix,
    radius: f64,
    samples: usize,
    streams: &SampleStreams,
    exec: Execution,
    ledger: &mut QueryLedger,
) -> Result<GradientEstimate> {
    let before = *ledger;
    let terms = zo2p_terms(oracle, k, radius, samples, streams, exec, ledger)?;
    Ok(GradientEstimate {
        gradient: mean(&terms),
        kind: EstimatorKind::Zo2p,
        samples,
        radius,
        queries: ledger.since(&before),
    })
}

/// ZO1P estimates at `K` and `K̃` from the same perturbations; `2m`
/// one-point queries. Bitwise identical outputs when `K == K̃`.
pub fn zo1p_pair_estimate<O: CostOracle + ?Sized>(
    oracle: &O,
    k: &Matrix,
    k_anchor: &Matrix,
    radius: f64,
    samples: usize,
    streams: &SampleStreams,
    exec: Execution,
    ledger: &mut QueryLedger,
) -> Result<(GradientEstimate, GradientEstimate)> {
    let before = *ledger;
    let terms = zo1p_pair_terms(oracle, k, k_anchor, radius, samples, streams, exec, ledger)?;
    let (current, anchor): (Vec<_>, Vec<_>) = terms.into_iter().unzip();
    // each side of the pair accounts for half of the queries
    let mut half = QueryLedger::new();
    half.record_one_point(ledger.since(&before).one_point_queries() / 2);
    let make = |terms: &[Matrix]| GradientEstimate {
        gradient: mean(terms),
        kind: EstimatorKind::Zo1p,
        samples,
        radius,
        queries: half,
    };
    Ok((make(&current), make(&anchor)))
}
