//! Black-box cost queries with exact accounting.
//!
//! An oracle only ever counts one-point queries; the estimator layer decides
//! whether a group of evaluations forms a two-point (`K ± U`) query and books
//! it accordingly when merging into the run ledger.

use std::ops::AddAssign;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::lqr::LinearQuadraticSystem;
use crate::rng::SampleRng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleMode {
    /// `tr(P_K Σ₀)`.
    #[default]
    Exact,
    /// `x₀ᵀP_Kx₀` with `x₀ ~ N(0, I)`; requires `Σ₀ = I`.
    SampledInitialState,
    /// Simulated `horizon`-step cost from `x₀ ~ N(0, Σ₀)`.
    FiniteHorizon { horizon: usize },
}

impl OracleMode {
    pub fn validate(&self) -> Result<()> {
        if let OracleMode::FiniteHorizon { horizon: 0 } = self {
            return Err(Error::InvalidConfig("finite horizon must be at least 1".into()));
        }
        Ok(())
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, OracleMode::Exact)
    }
}

/// What to do when a query lands on a destabilizing gain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DivergencePolicy {
    #[default]
    Abort,
    /// Redraw the offending perturbation; failed attempts stay on the ledger.
    Resample {
        #[serde(default = "DivergencePolicy::default_retries")]
        max_retries: u32,
    },
    /// Report a fixed cost instead of failing.
    Penalty { value: f64 },
}

impl DivergencePolicy {
    pub const DEFAULT_MAX_RETRIES: u32 = 10;

    fn default_retries() -> u32 {
        Self::DEFAULT_MAX_RETRIES
    }

    pub fn resample() -> Self {
        DivergencePolicy::Resample {
            max_retries: Self::DEFAULT_MAX_RETRIES,
        }
    }

    /// Penalty values must be finite and at least `reference_cost`
    /// (typically `C(K₀)`).
    pub fn validate(&self, reference_cost: f64) -> Result<()> {
        match *self {
            DivergencePolicy::Resample { max_retries: 0 } => {
                Err(Error::InvalidConfig("resample max_retries must be positive".into()))
            }
            DivergencePolicy::Penalty { value } if !value.is_finite() || value < reference_cost => {
                Err(Error::InvalidConfig(format!(
                    "penalty {value} must be finite and >= C(K0) = {reference_cost}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Number of extra draws allowed after a destabilized sample.
    pub fn retries(&self) -> u32 {
        match *self {
            DivergencePolicy::Resample { max_retries } => max_retries,
            _ => 0,
        }
    }
}

/// Oracle usage counters. `cost_evaluations = one_point + 2 · two_point`
/// holds by construction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryLedger {
    cost_evaluations: u64,
    one_point_queries: u64,
    two_point_queries: u64,
}

impl QueryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cost_evaluations(&self) -> u64 {
        self.cost_evaluations
    }

    pub fn one_point_queries(&self) -> u64 {
        self.one_point_queries
    }

    pub fn two_point_queries(&self) -> u64 {
        self.two_point_queries
    }

    /// Sample count in the `one_point + two_point` sense, i.e. evaluations
    /// with each `K ± U` pair counted once.
    pub fn samples(&self) -> u64 {
        self.one_point_queries + self.two_point_queries
    }

    pub fn record_one_point(&mut self, count: u64) {
        self.one_point_queries += count;
        self.cost_evaluations += count;
    }

    pub fn record_two_point(&mut self, count: u64) {
        self.two_point_queries += count;
        self.cost_evaluations += 2 * count;
    }

    /// Merges a scratch ledger whose one-point evaluations came in `K ± U`
    /// pairs, booking them as two-point queries.
    pub fn absorb_as_pairs(&mut self, scratch: &QueryLedger) {
        debug_assert_eq!(scratch.one_point_queries % 2, 0);
        self.record_two_point(scratch.one_point_queries / 2);
        self.record_two_point(scratch.two_point_queries);
    }

    pub fn identity_holds(&self) -> bool {
        self.cost_evaluations == self.one_point_queries + 2 * self.two_point_queries
    }

    /// Counter differences `self − earlier`.
    pub fn since(&self, earlier: &QueryLedger) -> QueryLedger {
        QueryLedger {
            cost_evaluations: self.cost_evaluations - earlier.cost_evaluations,
            one_point_queries: self.one_point_queries - earlier.one_point_queries,
            two_point_queries: self.two_point_queries - earlier.two_point_queries,
        }
    }
}

impl AddAssign<&QueryLedger> for QueryLedger {
    fn add_assign(&mut self, rhs: &QueryLedger) {
        self.cost_evaluations += rhs.cost_evaluations;
        self.one_point_queries += rhs.one_point_queries;
        self.two_point_queries += rhs.two_point_queries;
    }
}

/// Anything that returns a cost for a gain matrix.
pub trait CostOracle: Sync {
    fn gain_shape(&self) -> (usize, usize);

    /// Raw evaluation without accounting or divergence handling. A
    /// destabilizing gain must yield [`Error::DestabilizedQuery`].
    fn evaluate(&self, k: &Matrix, rng: &mut SampleRng) -> Result<f64>;

    fn divergence_policy(&self) -> DivergencePolicy {
        DivergencePolicy::Abort
    }

    /// One accounted query. Under [`DivergencePolicy::Penalty`] a
    /// destabilized query returns the penalty value.
    fn query(&self, k: &Matrix, rng: &mut SampleRng, ledger: &mut QueryLedger) -> Result<f64> {
        ledger.record_one_point(1);
        let result = self.evaluate(k, rng);
        if let (Err(Error::DestabilizedQuery { .. }), DivergencePolicy::Penalty { value }) =
            (&result, self.divergence_policy())
        {
            return Ok(value);
        }
        result
    }
}

/// Cost oracle backed by an LQR instance.
#[derive(Clone, Debug)]
pub struct LqrOracle<'a> {
    sys: &'a LinearQuadraticSystem,
    mode: OracleMode,
    policy: DivergencePolicy,
    sigma_factor: Matrix,
}

impl<'a> LqrOracle<'a> {
    pub fn new(sys: &'a LinearQuadraticSystem, mode: OracleMode, policy: DivergencePolicy) -> Result<Self> {
        mode.validate()?;
        if mode == OracleMode::SampledInitialState
            && sys.sigma0().max_abs_diff(&Matrix::identity(sys.state_dim())) != 0.0
        {
            return Err(Error::InvalidConfig(
                "sampled initial-state oracle requires Sigma0 = I".into(),
            ));
        }
        let tol = 1e-12 * (1.0 + sys.sigma0().frobenius_norm());
        let sigma_factor = sys
            .sigma0()
            .psd_factor(tol)
            .ok_or_else(|| Error::InvalidSystem("Sigma0 not positive semidefinite".into()))?;
        Ok(Self {
            sys,
            mode,
            policy,
            sigma_factor,
        })
    }

    pub fn exact(sys: &'a LinearQuadraticSystem) -> Self {
        Self::new(sys, OracleMode::Exact, DivergencePolicy::Abort).expect("validated system")
    }

    pub fn system(&self) -> &LinearQuadraticSystem {
        self.sys
    }

    pub fn mode(&self) -> OracleMode {
        self.mode
    }

    fn draw_initial_state(&self, rng: &mut SampleRng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.sys.state_dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.sigma_factor.mat_vec(&z)
    }
}

impl CostOracle for LqrOracle<'_> {
    fn gain_shape(&self) -> (usize, usize) {
        self.sys.gain_shape()
    }

    fn evaluate(&self, k: &Matrix, rng: &mut SampleRng) -> Result<f64> {
        let rho = self.sys.closed_loop_radius(k)?;
        if !(rho < 1.0 - crate::lqr::STABILITY_MARGIN) {
            return Err(Error::DestabilizedQuery { spectral_radius: rho });
        }
        match self.mode {
            OracleMode::Exact => self.sys.cost(k),
            OracleMode::SampledInitialState => {
                let x0 = self.draw_initial_state(rng);
                self.sys.cost_from_initial_state(k, &x0)
            }
            OracleMode::FiniteHorizon { horizon } => {
                let x0 = self.draw_initial_state(rng);
                rollout_cost(self.sys, k, &x0, horizon)
            }
        }
    }

    fn divergence_policy(&self) -> DivergencePolicy {
        self.policy
    }
}

/// `Σ_{τ<horizon} xᵀQx + uᵀRu` along `x⁺ = (A − BK)x`, `u = −Kx`.
pub fn rollout_cost(sys: &LinearQuadraticSystem, k: &Matrix, x0: &[f64], horizon: usize) -> Result<f64> {
    sys.check_state(x0)?;
    let closed = sys.closed_loop(k)?;
    let weight = sys.stage_weight(k);
    let mut x = x0.to_vec();
    let mut total = 0.0;
    for _ in 0..horizon {
        total += weight.quadratic_form(&x);
        x = closed.mat_vec(&x);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SampleStreams;
    use approx::assert_relative_eq;

    fn scalar_sys() -> LinearQuadraticSystem {
        let s = |v: f64| Matrix::from_row_slice(1, 1, &[v]).unwrap();
        LinearQuadraticSystem::new(s(0.5), s(1.0), s(1.0), s(1.0), s(1.0)).unwrap()
    }

    fn k(v: f64) -> Matrix {
        Matrix::from_row_slice(1, 1, &[v]).unwrap()
    }

    #[test]
    fn exact_query_counts_and_is_deterministic() {
        let sys = scalar_sys();
        let oracle = LqrOracle::exact(&sys);
        let mut ledger = QueryLedger::new();
        let mut rng = SampleStreams::new(0, 0).stream(0);
        let a = oracle.query(&k(0.2), &mut rng, &mut ledger).unwrap();
        let b = oracle.query(&k(0.2), &mut rng, &mut ledger).unwrap();
        assert_eq!(a, b);
        assert_relative_eq!(a, 1.04 / 0.91, max_relative = 1e-13);
        assert_eq!(ledger.cost_evaluations(), 2);
        assert_eq!(ledger.one_point_queries(), 2);
        assert!(ledger.identity_holds());
    }

    #[test]
    fn sampled_state_is_quadratic_form() {
        let sys = scalar_sys();
        let oracle = LqrOracle::new(&sys, OracleMode::SampledInitialState, DivergencePolicy::Abort).unwrap();
        let mut rng = SampleStreams::new(3, 0).stream(0);
        let mut probe = rng.clone();
        let x0: f64 = probe.sample(StandardNormal);
        let v = oracle.evaluate(&k(0.2), &mut rng).unwrap();
        assert_relative_eq!(v, x0 * x0 * 1.04 / 0.91, max_relative = 1e-13);
    }

    #[test]
    fn sampled_state_requires_identity_covariance() {
        let s = |v: f64| Matrix::from_row_slice(1, 1, &[v]).unwrap();
        let sys = LinearQuadraticSystem::new(s(0.5), s(1.0), s(1.0), s(1.0), s(2.0)).unwrap();
        assert!(matches!(
            LqrOracle::new(&sys, OracleMode::SampledInitialState, DivergencePolicy::Abort),
            Err(Error::InvalidConfig(_))
        ));
        assert!(LqrOracle::new(&sys, OracleMode::FiniteHorizon { horizon: 0 }, DivergencePolicy::Abort).is_err());
    }

    #[test]
    fn finite_horizon_from_origin_is_zero() {
        let sys = scalar_sys();
        assert_eq!(rollout_cost(&sys, &k(0.2), &[0.0], 1).unwrap(), 0.0);
    }

    #[test]
    fn destabilized_query_policies() {
        let sys = scalar_sys();
        let mut rng = SampleStreams::new(0, 0).stream(0);
        let mut ledger = QueryLedger::new();
        let abort = LqrOracle::exact(&sys);
        assert!(matches!(
            abort.query(&k(2.0), &mut rng, &mut ledger),
            Err(Error::DestabilizedQuery { .. })
        ));
        let penalty = LqrOracle::new(&sys, OracleMode::Exact, DivergencePolicy::Penalty { value: 1e6 }).unwrap();
        assert_eq!(penalty.query(&k(2.0), &mut rng, &mut ledger).unwrap(), 1e6);
        assert_eq!(ledger.cost_evaluations(), 2);
    }

    #[test]
    fn penalty_must_dominate_reference_cost() {
        assert!(DivergencePolicy::Penalty { value: 10.0 }.validate(20.0).is_err());
        assert!(DivergencePolicy::Penalty { value: f64::INFINITY }.validate(20.0).is_err());
        assert!(DivergencePolicy::Penalty { value: 30.0 }.validate(20.0).is_ok());
        assert!(DivergencePolicy::Resample { max_retries: 0 }.validate(1.0).is_err());
    }

    #[test]
    fn ledger_pairs() {
        let mut scratch = QueryLedger::new();
        scratch.record_one_point(6);
        let mut main = QueryLedger::new();
        main.absorb_as_pairs(&scratch);
        assert_eq!(main.two_point_queries(), 3);
        assert_eq!(main.cost_evaluations(), 6);
        assert_eq!(main.one_point_queries(), 0);
        assert!(main.identity_holds());
    }
}
