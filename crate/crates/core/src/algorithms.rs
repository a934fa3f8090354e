//! Policy-gradient loops: model-based PG, ZO1P/ZO2P PG and the dual-loop
//! variance-reduced SVRPG.
//!
//! Every iterate is checked for closed-loop stability right after the step
//! and before the next oracle use. A run that leaves the stabilizing set
//! stops with [`Termination::Destabilized`] and never emits the unstable
//! record. Records report the exact objective regardless of the oracle mode.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::Matrix;
use crate::lqr::{GapBaseline, LinearQuadraticSystem, STABILITY_MARGIN};
use crate::oracle::{DivergencePolicy, LqrOracle, OracleMode, QueryLedger};
use crate::rng::SeedSequence;
use crate::zeroth_order::{zo1p_estimate, zo1p_pair_estimate, zo2p_estimate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum Algorithm {
    /// Gradient descent with the exact model-based gradient.
    ExactPg {
        #[serde(alias = "L")]
        iterations: usize,
    },
    /// Gradient descent with ZO1P estimates.
    Zo1pPg {
        #[serde(alias = "L")]
        iterations: usize,
        #[serde(alias = "n1")]
        samples: usize,
        #[serde(alias = "r")]
        radius: f64,
    },
    /// Gradient descent with ZO2P estimates.
    Zo2pPg {
        #[serde(alias = "L")]
        iterations: usize,
        #[serde(alias = "n1")]
        samples: usize,
        #[serde(alias = "r")]
        radius: f64,
    },
    /// ZO2P anchor gradient per epoch, shared-sample ZO1P corrections inside.
    Svrpg {
        #[serde(alias = "N")]
        epochs: usize,
        #[serde(alias = "T")]
        inner_steps: usize,
        #[serde(alias = "n1")]
        outer_samples: usize,
        #[serde(alias = "n2")]
        inner_samples: usize,
        #[serde(alias = "r_out")]
        outer_radius: f64,
        #[serde(alias = "r_in")]
        inner_radius: f64,
    },
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::ExactPg { .. } => "exact_pg",
            Algorithm::Zo1pPg { .. } => "zo1p_pg",
            Algorithm::Zo2pPg { .. } => "zo2p_pg",
            Algorithm::Svrpg { .. } => "svrpg",
        }
    }

    /// Total number of gradient steps.
    pub fn total_steps(&self) -> usize {
        match *self {
            Algorithm::ExactPg { iterations }
            | Algorithm::Zo1pPg { iterations, .. }
            | Algorithm::Zo2pPg { iterations, .. } => iterations,
            Algorithm::Svrpg {
                epochs, inner_steps, ..
            } => epochs * inner_steps,
        }
    }

    /// Ledger a completed run must end with under the abort policy.
    pub fn expected_ledger(&self) -> QueryLedger {
        let mut ledger = QueryLedger::new();
        match *self {
            Algorithm::ExactPg { .. } => {}
            Algorithm::Zo1pPg {
                iterations, samples, ..
            } => ledger.record_one_point((iterations * samples) as u64),
            Algorithm::Zo2pPg {
                iterations, samples, ..
            } => ledger.record_two_point((iterations * samples) as u64),
            Algorithm::Svrpg {
                epochs,
                inner_steps,
                outer_samples,
                inner_samples,
                ..
            } => {
                ledger.record_two_point((epochs * outer_samples) as u64);
                ledger.record_one_point((2 * epochs * inner_steps * inner_samples) as u64);
            }
        }
        ledger
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        let nonzero = |name: &str, v: usize| {
            if v >= 1 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be at least 1")))
            }
        };
        match *self {
            Algorithm::ExactPg { .. } => Ok(()),
            Algorithm::Zo1pPg { samples, radius, .. } | Algorithm::Zo2pPg { samples, radius, .. } => {
                nonzero("samples", samples)?;
                positive("radius", radius)
            }
            Algorithm::Svrpg {
                inner_steps,
                outer_samples,
                inner_samples,
                outer_radius,
                inner_radius,
                ..
            } => {
                nonzero("inner_steps", inner_steps)?;
                nonzero("outer_samples", outer_samples)?;
                nonzero("inner_samples", inner_samples)?;
                positive("outer_radius", outer_radius)?;
                positive("inner_radius", inner_radius)
            }
        }
    }
}

fn default_record_every() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub algorithm: Algorithm,
    /// Step size.
    pub eta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub oracle_mode: OracleMode,
    #[serde(default)]
    pub divergence_policy: DivergencePolicy,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// How samples inside one estimator call are scheduled. Does not change
    /// results.
    #[serde(default, skip_serializing)]
    pub execution: Execution,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, eta: f64) -> Self {
        Self {
            algorithm,
            eta,
            seed: 0,
            oracle_mode: OracleMode::Exact,
            divergence_policy: DivergencePolicy::Abort,
            record_every: 1,
            execution: Execution::Sequential,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidConfig("record_every must be at least 1".into()));
        }
        self.oracle_mode.validate()?;
        self.algorithm.validate()
    }
}

/// A benchmark instance prepared for optimization: system, initial gain,
/// Riccati optimum and the gap reference.
#[derive(Clone, Debug)]
pub struct Problem {
    system: LinearQuadraticSystem,
    initial_gain: Matrix,
    optimal_gain: Matrix,
    optimal_value: Matrix,
    baseline: GapBaseline,
    initial_cost: f64,
}

impl Problem {
    pub fn new(system: LinearQuadraticSystem, initial_gain: Matrix, x0: Vec<f64>) -> Result<Self> {
        system.check_gain(&initial_gain)?;
        system.check_state(&x0)?;
        let rho = system.closed_loop_radius(&initial_gain)?;
        if !(rho < 1.0 - STABILITY_MARGIN) {
            return Err(Error::UnstableGain { spectral_radius: rho });
        }
        let (optimal_value, optimal_gain) = system.optimal_gain()?;
        let baseline = GapBaseline::new(&system, &initial_gain, &optimal_gain, &x0)?;
        let initial_cost = system.cost(&initial_gain)?;
        Ok(Self {
            system,
            initial_gain,
            optimal_gain,
            optimal_value,
            baseline,
            initial_cost,
        })
    }

    /// Same instance and gap reference, different starting gain.
    pub fn with_start(&self, start: Matrix) -> Result<Self> {
        let rho = self.system.closed_loop_radius(&start)?;
        if !(rho < 1.0 - STABILITY_MARGIN) {
            return Err(Error::UnstableGain { spectral_radius: rho });
        }
        Ok(Self {
            initial_gain: start,
            ..self.clone()
        })
    }

    pub fn system(&self) -> &LinearQuadraticSystem {
        &self.system
    }

    pub fn initial_gain(&self) -> &Matrix {
        &self.initial_gain
    }

    pub fn optimal_gain(&self) -> &Matrix {
        &self.optimal_gain
    }

    pub fn optimal_value(&self) -> &Matrix {
        &self.optimal_value
    }

    pub fn baseline(&self) -> &GapBaseline {
        &self.baseline
    }

    /// Expected cost `C(K₀)`.
    pub fn initial_cost(&self) -> f64 {
        self.initial_cost
    }

    pub fn optimal_cost(&self) -> f64 {
        self.optimal_value.frobenius_dot(self.system.sigma0())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub global_step: u64,
    pub epoch: Option<u64>,
    pub inner_step: Option<u64>,
    /// Expected cost `C(K)`.
    pub cost: f64,
    pub normalized_gap: f64,
    /// Frobenius norm of the applied direction (0 for the initial record).
    pub grad_norm: f64,
    pub spectral_radius: f64,
    pub cost_evaluations_cum: u64,
    pub two_point_cum: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    Destabilized { step: u64 },
    OracleFailure { step: u64, reason: String },
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::Destabilized { .. } => "destabilized",
            Termination::OracleFailure { .. } => "oracle_failure",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub config: RunConfig,
    pub records: Vec<IterationRecord>,
    pub final_gain: Matrix,
    pub ledger: QueryLedger,
    pub termination: Termination,
}

impl Trace {
    pub fn is_completed(&self) -> bool {
        self.termination == Termination::Completed
    }

    pub fn final_gap(&self) -> Option<f64> {
        self.records.last().map(|r| r.normalized_gap)
    }
}

struct Recorder<'a> {
    problem: &'a Problem,
    every: usize,
    last_step: u64,
    records: Vec<IterationRecord>,
}

impl<'a> Recorder<'a> {
    fn new(problem: &'a Problem, cfg: &RunConfig) -> Self {
        Self {
            problem,
            every: cfg.record_every,
            last_step: cfg.algorithm.total_steps() as u64,
            records: Vec::new(),
        }
    }

    /// Audits stability of `k` and emits a record on cadence. Returns
    /// `Ok(false)` when `k` is not stabilizing.
    fn observe(
        &mut self,
        step: u64,
        position: Option<(u64, u64)>,
        k: &Matrix,
        direction_norm: f64,
        ledger: &QueryLedger,
    ) -> Result<bool> {
        let sys = self.problem.system();
        let rho = sys.closed_loop_radius(k)?;
        if !(rho < 1.0 - STABILITY_MARGIN) {
            return Ok(false);
        }
        if step.is_multiple_of(self.every as u64) || step == self.last_step {
            let p = sys.value_matrix(k)?;
            self.records.push(IterationRecord {
                global_step: step,
                epoch: position.map(|(n, _)| n),
                inner_step: position.map(|(_, t)| t),
                cost: p.frobenius_dot(sys.sigma0()),
                normalized_gap: self.problem.baseline().gap_from_value(&p),
                grad_norm: direction_norm,
                spectral_radius: rho,
                cost_evaluations_cum: ledger.cost_evaluations(),
                two_point_cum: ledger.two_point_queries(),
            });
        }
        Ok(true)
    }

    /// Makes sure the last audited iterate is on record.
    fn flush_final(&mut self, step: u64, position: Option<(u64, u64)>, k: &Matrix, dir: f64, ledger: &QueryLedger) -> Result<()> {
        if self.records.last().map(|r| r.global_step) != Some(step) {
            self.every = 1;
            self.observe(step, position, k, dir, ledger)?;
        }
        Ok(())
    }
}

fn prepare<'a>(problem: &'a Problem, cfg: &RunConfig) -> Result<LqrOracle<'a>> {
    cfg.validate()?;
    cfg.divergence_policy.validate(problem.initial_cost())?;
    LqrOracle::new(problem.system(), cfg.oracle_mode, cfg.divergence_policy)
}

/// Dispatches on `cfg.algorithm`.
pub fn run(problem: &Problem, cfg: &RunConfig) -> Result<Trace> {
    match cfg.algorithm {
        Algorithm::ExactPg { .. } => run_exact_pg(problem, cfg),
        Algorithm::Zo1pPg { .. } => run_zo1p_pg(problem, cfg),
        Algorithm::Zo2pPg { .. } => run_pg_zo2p(problem, cfg),
        Algorithm::Svrpg { .. } => run_svrpg(problem, cfg),
    }
}

fn wrong_algorithm(expected: &str, cfg: &RunConfig) -> Error {
    Error::InvalidConfig(format!(
        "expected a {expected} configuration, got {}",
        cfg.algorithm.name()
    ))
}

/// `K ← K − η ∇C(K)` with the exact gradient.
pub fn run_exact_pg(problem: &Problem, cfg: &RunConfig) -> Result<Trace> {
    let Algorithm::ExactPg { iterations } = cfg.algorithm else {
        return Err(wrong_algorithm("exact_pg", cfg));
    };
    prepare(problem, cfg)?;
    let sys = problem.system();
    let ledger = QueryLedger::new();
    let mut rec = Recorder::new(problem, cfg);
    let mut k = problem.initial_gain().clone();
    rec.observe(0, None, &k, 0.0, &ledger)?;
    let mut termination = Termination::Completed;
    let mut last = (0, 0.0);
    for l in 0..iterations as u64 {
        let grad = sys.exact_gradient(&k)?;
        let mut next = k.clone();
        next.axpy(-cfg.eta, &grad);
        let norm = grad.frobenius_norm();
        if !rec.observe(l + 1, None, &next, norm, &ledger)? {
            termination = Termination::Destabilized { step: l + 1 };
            break;
        }
        k = next;
        last = (l + 1, norm);
    }
    rec.flush_final(last.0, None, &k, last.1, &ledger)?;
    Ok(Trace {
        config: cfg.clone(),
        records: rec.records,
        final_gain: k,
        ledger,
        termination,
    })
}

fn run_single_loop(problem: &Problem, cfg: &RunConfig, two_point: bool) -> Result<Trace> {
    let (iterations, samples, radius) = match cfg.algorithm {
        Algorithm::Zo1pPg {
            iterations,
            samples,
            radius,
        } if !two_point => (iterations, samples, radius),
        Algorithm::Zo2pPg {
            iterations,
            samples,
            radius,
        } if two_point => (iterations, samples, radius),
        _ => return Err(wrong_algorithm(if two_point { "zo2p_pg" } else { "zo1p_pg" }, cfg)),
    };
    let oracle = prepare(problem, cfg)?;
    let mut seeds = SeedSequence::new(cfg.seed);
    let mut ledger = QueryLedger::new();
    let mut rec = Recorder::new(problem, cfg);
    let mut k = problem.initial_gain().clone();
    rec.observe(0, None, &k, 0.0, &ledger)?;
    let mut termination = Termination::Completed;
    let mut last = (0, 0.0);
    for l in 0..iterations as u64 {
        let streams = seeds.fork();
        let estimate = if two_point {
            zo2p_estimate(&oracle, &k, radius, samples, &streams, cfg.execution, &mut ledger)
        } else {
            zo1p_estimate(&oracle, &k, radius, samples, &streams, cfg.execution, &mut ledger)
        };
        let estimate = match estimate {
            Ok(e) => e,
            Err(e) => {
                termination = Termination::OracleFailure {
                    step: l,
                    reason: e.to_string(),
                };
                break;
            }
        };
        let mut next = k.clone();
        next.axpy(-cfg.eta, &estimate.gradient);
        let norm = estimate.gradient.frobenius_norm();
        if !rec.observe(l + 1, None, &next, norm, &ledger)? {
            termination = Termination::Destabilized { step: l + 1 };
            break;
        }
        k = next;
        last = (l + 1, norm);
    }
    rec.flush_final(last.0, None, &k, last.1, &ledger)?;
    Ok(Trace {
        config: cfg.clone(),
        records: rec.records,
        final_gain: k,
        ledger,
        termination,
    })
}

/// Policy gradient with two-point estimates, `n1` two-point queries per step.
pub fn run_pg_zo2p(problem: &Problem, cfg: &RunConfig) -> Result<Trace> {
    run_single_loop(problem, cfg, true)
}

/// Policy gradient with one-point estimates, `n1` one-point queries per step.
pub fn run_zo1p_pg(problem: &Problem, cfg: &RunConfig) -> Result<Trace> {
    run_single_loop(problem, cfg, false)
}

/// What the SVRPG inner loop just did; handed to observers of
/// [`run_svrpg_observed`].
#[derive(Debug)]
pub struct SvrpgStep<'a> {
    pub epoch: u64,
    pub inner_step: u64,
    /// Epoch snapshot `K̃`.
    pub anchor_gain: &'a Matrix,
    /// Gain the direction was evaluated at.
    pub gain: &'a Matrix,
    /// Epoch ZO2P estimate `μ̃`.
    pub anchor_gradient: &'a Matrix,
    /// Applied direction `v = μ̃ + (∇̄C(K) − ∇̄C(K̃))`.
    pub direction: &'a Matrix,
}

/// Dual-loop SVRPG.
pub fn run_svrpg(problem: &Problem, cfg: &RunConfig) -> Result<Trace> {
    run_svrpg_observed(problem, cfg, |_| {})
}

pub fn run_svrpg_observed(
    problem: &Problem,
    cfg: &RunConfig,
    mut observer: impl FnMut(&SvrpgStep<'_>),
) -> Result<Trace> {
    let Algorithm::Svrpg {
        epochs,
        inner_steps,
        outer_samples,
        inner_samples,
        outer_radius,
        inner_radius,
    } = cfg.algorithm
    else {
        return Err(wrong_algorithm("svrpg", cfg));
    };
    let oracle = prepare(problem, cfg)?;
    let mut seeds = SeedSequence::new(cfg.seed);
    let mut ledger = QueryLedger::new();
    let mut rec = Recorder::new(problem, cfg);
    let mut k = problem.initial_gain().clone();
    rec.observe(0, None, &k, 0.0, &ledger)?;
    let mut termination = Termination::Completed;
    let mut last = (0, None, 0.0);

    'epochs: for n in 0..epochs as u64 {
        let anchor = k.clone();
        let step_base = n * inner_steps as u64;
        let mu = match zo2p_estimate(
            &oracle,
            &anchor,
            outer_radius,
            outer_samples,
            &seeds.fork(),
            cfg.execution,
            &mut ledger,
        ) {
            Ok(e) => e.gradient,
            Err(e) => {
                termination = Termination::OracleFailure {
                    step: step_base,
                    reason: e.to_string(),
                };
                break;
            }
        };
        for t in 0..inner_steps as u64 {
            let step = step_base + t;
            let (current, at_anchor) = match zo1p_pair_estimate(
                &oracle,
                &k,
                &anchor,
                inner_radius,
                inner_samples,
                &seeds.fork(),
                cfg.execution,
                &mut ledger,
            ) {
                Ok(pair) => pair,
                Err(e) => {
                    termination = Termination::OracleFailure {
                        step,
                        reason: e.to_string(),
                    };
                    break 'epochs;
                }
            };
            let correction = &current.gradient - &at_anchor.gradient;
            let direction = &mu + &correction;
            observer(&SvrpgStep {
                epoch: n,
                inner_step: t,
                anchor_gain: &anchor,
                gain: &k,
                anchor_gradient: &mu,
                direction: &direction,
            });
            let mut next = k.clone();
            next.axpy(-cfg.eta, &direction);
            let norm = direction.frobenius_norm();
            if !rec.observe(step + 1, Some((n, t)), &next, norm, &ledger)? {
                termination = Termination::Destabilized { step: step + 1 };
                break 'epochs;
            }
            k = next;
            last = (step + 1, Some((n, t)), norm);
        }
    }
    rec.flush_final(last.0, last.1, &k, last.2, &ledger)?;
    Ok(Trace {
        config: cfg.clone(),
        records: rec.records,
        final_gain: k,
        ledger,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_problem(k0: f64) -> Problem {
        let s = |v: f64| Matrix::from_row_slice(1, 1, &[v]).unwrap();
        let sys = LinearQuadraticSystem::new(s(0.5), s(1.0), s(1.0), s(1.0), s(1.0)).unwrap();
        Problem::new(sys, s(k0), vec![1.0]).unwrap()
    }

    #[test]
    fn exact_pg_scalar_converges_to_riccati_gain() {
        let problem = scalar_problem(0.0);
        let cfg = RunConfig::new(Algorithm::ExactPg { iterations: 200 }, 0.1);
        let trace = run_exact_pg(&problem, &cfg).unwrap();
        assert!(trace.is_completed());
        let p = (0.25 + 4.0625_f64.sqrt()) / 2.0;
        let kstar = 0.5 * p / (1.0 + p);
        assert!((trace.final_gain[(0, 0)] - kstar).abs() <= 1e-6);
        assert_eq!(trace.records.len(), 201);
        assert_eq!(trace.ledger, QueryLedger::new());
    }

    #[test]
    fn exact_pg_from_optimum_stays_put() {
        let problem = scalar_problem(0.0);
        let kstar = problem.optimal_gain().clone();
        let started = problem.with_start(kstar.clone()).unwrap();
        let mut cfg = RunConfig::new(Algorithm::ExactPg { iterations: 50 }, 0.1);
        cfg.record_every = 10;
        let trace = run_exact_pg(&started, &cfg).unwrap();
        assert!((trace.final_gain[(0, 0)] - kstar[(0, 0)]).abs() <= 1e-14);
        assert!(trace.records.iter().all(|r| r.normalized_gap.abs() <= 1e-12));
        assert_eq!(trace.records.len(), 6);
    }

    #[test]
    fn zero_iterations_gives_single_record() {
        let problem = scalar_problem(0.0);
        let cfg = RunConfig::new(
            Algorithm::Zo2pPg {
                iterations: 0,
                samples: 5,
                radius: 0.01,
            },
            0.01,
        );
        let trace = run_pg_zo2p(&problem, &cfg).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.ledger, QueryLedger::new());
        assert_eq!(trace.records[0].normalized_gap, 1.0);
    }

    #[test]
    fn zero_epochs_gives_single_record() {
        let problem = scalar_problem(0.0);
        let cfg = RunConfig::new(
            Algorithm::Svrpg {
                epochs: 0,
                inner_steps: 3,
                outer_samples: 4,
                inner_samples: 2,
                outer_radius: 1e-3,
                inner_radius: 1e-2,
            },
            0.01,
        );
        let trace = run_svrpg(&problem, &cfg).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert_eq!(trace.ledger, QueryLedger::new());
    }

    #[test]
    fn destabilizing_step_terminates_without_unstable_record() {
        let problem = scalar_problem(0.0);
        let cfg = RunConfig::new(Algorithm::ExactPg { iterations: 10 }, 50.0);
        let trace = run_exact_pg(&problem, &cfg).unwrap();
        assert_eq!(trace.termination, Termination::Destabilized { step: 1 });
        assert!(trace.records.iter().all(|r| r.spectral_radius < 1.0));
        assert_eq!(trace.final_gain, *problem.initial_gain());
    }

    #[test]
    fn mismatched_algorithm_is_rejected() {
        let problem = scalar_problem(0.0);
        let cfg = RunConfig::new(Algorithm::ExactPg { iterations: 1 }, 0.1);
        assert!(matches!(run_svrpg(&problem, &cfg), Err(Error::InvalidConfig(_))));
        let bad = RunConfig::new(Algorithm::ExactPg { iterations: 1 }, -0.1);
        assert!(run(&problem, &bad).is_err());
    }

    #[test]
    fn config_json_accepts_short_names() {
        let cfg: RunConfig = serde_json::from_str(
            r#"{"algorithm":"svrpg","N":125,"T":4,"n1":50,"n2":25,"r_out":1e-4,"r_in":5e-2,"eta":1e-4}"#,
        )
        .unwrap();
        assert_eq!(cfg.algorithm.expected_ledger().cost_evaluations(), 37_500);
        assert_eq!(cfg.record_every, 1);
        assert_eq!(cfg.divergence_policy, DivergencePolicy::Abort);
    }
}
