//! Derivative-free policy gradient for discrete-time LQR.
//!
//! Policies are static state feedback `u = −Kx`. [`lqr`] evaluates the
//! expected cost `C(K) = tr(P_K Σ₀)` and its exact gradient, [`zeroth_order`]
//! builds one-point and two-point sphere-smoothing estimates from cost
//! queries, and [`algorithms`] runs exact PG, ZO1P/ZO2P PG and the
//! variance-reduced dual-loop SVRPG with every cost query counted.
//!
//! ```
//! use svrpg::{run, Algorithm, Matrix, LinearQuadraticSystem, Problem, RunConfig};
//!
//! let s = |v: f64| Matrix::from_row_slice(1, 1, &[v]).unwrap();
//! let sys = LinearQuadraticSystem::new(s(0.5), s(1.0), s(1.0), s(1.0), s(1.0)).unwrap();
//! let problem = Problem::new(sys, s(0.0), vec![1.0]).unwrap();
//! let cfg = RunConfig::new(Algorithm::ExactPg { iterations: 200 }, 0.2);
//! let trace = run(&problem, &cfg).unwrap();
//! assert!(trace.final_gap().unwrap() < 1e-8);
//! ```

// `!(x < bound)` is the intended NaN-rejecting form throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Estimator entry points take oracle, gain, radius, count, streams,
// scheduling and ledger explicitly.
#![allow(clippy::too_many_arguments)]

pub mod algorithms;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod harness;
pub mod linalg;
pub mod lqr;
pub mod oracle;
pub mod rng;
pub mod zeroth_order;

pub use algorithms::{
    run, run_exact_pg, run_pg_zo2p, run_svrpg, run_svrpg_observed, run_zo1p_pg, Algorithm, IterationRecord,
    Problem, RunConfig, SvrpgStep, Termination, Trace,
};
pub use error::{Error, Result};
pub use exec::Execution;
pub use linalg::Matrix;
pub use lqr::{GapBaseline, LinearQuadraticSystem};
pub use oracle::{CostOracle, DivergencePolicy, LqrOracle, OracleMode, QueryLedger};
pub use zeroth_order::{zo1p_estimate, zo2p_estimate, GradientEstimate};
