//! LQR problem instances with exact (model-based) cost and gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Gains with closed-loop spectral radius within this margin of 1 are
/// treated as destabilizing.
pub const STABILITY_MARGIN: f64 = 1e-12;

const DEGENERATE_BASELINE: f64 = 1e-14;

/// Discrete-time LTI plant `x⁺ = Ax + Bu` with quadratic stage cost
/// `xᵀQx + uᵀRu` and initial-state second moment `Σ₀ = E[x₀x₀ᵀ]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinearQuadraticSystem {
    a: Matrix,
    b: Matrix,
    q: Matrix,
    r: Matrix,
    sigma0: Matrix,
}

impl LinearQuadraticSystem {
    pub fn new(a: Matrix, b: Matrix, q: Matrix, r: Matrix, sigma0: Matrix) -> Result<Self> {
        let n = a.rows();
        if !a.is_square() {
            return Err(Error::NonSquare {
                rows: a.rows(),
                cols: a.cols(),
            });
        }
        if b.rows() != n {
            return Err(Error::DimensionMismatch {
                context: "B rows must match A",
                left: a.shape(),
                right: b.shape(),
            });
        }
        let m = b.cols();
        for (context, mat, want) in [
            ("Q shape", &q, (n, n)),
            ("R shape", &r, (m, m)),
            ("Sigma0 shape", &sigma0, (n, n)),
        ] {
            if mat.shape() != want {
                return Err(Error::DimensionMismatch {
                    context,
                    left: want,
                    right: mat.shape(),
                });
            }
        }
        for (name, mat) in [("Q", &q), ("R", &r)] {
            if !mat.is_symmetric(1e-12) || mat.cholesky().is_none() {
                return Err(Error::InvalidSystem(format!("{name} not positive definite")));
            }
        }
        let tol = 1e-12 * (1.0 + sigma0.frobenius_norm());
        if !sigma0.is_symmetric(1e-12) || sigma0.psd_factor(tol).is_none() {
            return Err(Error::InvalidSystem("Sigma0 not positive semidefinite".into()));
        }
        Ok(Self { a, b, q, r, sigma0 })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    pub fn sigma0(&self) -> &Matrix {
        &self.sigma0
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }

    /// Number of gain entries, `n_x · n_u`.
    pub fn gain_dim(&self) -> usize {
        self.state_dim() * self.input_dim()
    }

    pub fn gain_shape(&self) -> (usize, usize) {
        (self.input_dim(), self.state_dim())
    }

    pub fn check_gain(&self, k: &Matrix) -> Result<()> {
        if k.shape() != self.gain_shape() {
            return Err(Error::DimensionMismatch {
                context: "gain shape",
                left: self.gain_shape(),
                right: k.shape(),
            });
        }
        Ok(())
    }

    /// `A − BK`.
    pub fn closed_loop(&self, k: &Matrix) -> Result<Matrix> {
        self.check_gain(k)?;
        Ok(&self.a - &(&self.b * k))
    }

    pub fn closed_loop_radius(&self, k: &Matrix) -> Result<f64> {
        linalg::spectral_radius(&self.closed_loop(k)?)
    }

    pub fn is_stabilizing(&self, k: &Matrix) -> Result<bool> {
        let rho = self.closed_loop_radius(k)?;
        Ok(rho < 1.0 - STABILITY_MARGIN)
    }

    fn stable_closed_loop(&self, k: &Matrix) -> Result<Matrix> {
        let closed = self.closed_loop(k)?;
        let rho = linalg::spectral_radius(&closed)?;
        if !(rho < 1.0 - STABILITY_MARGIN) {
            return Err(Error::UnstableGain {
                spectral_radius: rho,
            });
        }
        Ok(closed)
    }

    /// `Q + KᵀRK`.
    pub fn stage_weight(&self, k: &Matrix) -> Matrix {
        (&self.q + &(&(&k.transpose() * &self.r) * k)).symmetrize()
    }

    /// Value matrix `P_K` with `xᵀP_Kx` the infinite-horizon cost from `x`.
    pub fn value_matrix(&self, k: &Matrix) -> Result<Matrix> {
        let closed = self.stable_closed_loop(k)?;
        linalg::solve_discrete_lyapunov(&closed, &self.stage_weight(k))
    }

    /// Expected cost `tr(P_K Σ₀)`.
    pub fn cost(&self, k: &Matrix) -> Result<f64> {
        let p = self.value_matrix(k)?;
        Ok(p.frobenius_dot(&self.sigma0))
    }

    /// `x₀ᵀ P_K x₀`.
    pub fn cost_from_initial_state(&self, k: &Matrix, x0: &[f64]) -> Result<f64> {
        self.check_state(x0)?;
        Ok(self.value_matrix(k)?.quadratic_form(x0))
    }

    /// State covariance `Σ_K = Σ₀ + (A−BK) Σ_K (A−BK)ᵀ`.
    pub fn state_covariance(&self, k: &Matrix) -> Result<Matrix> {
        let closed = self.stable_closed_loop(k)?;
        linalg::solve_discrete_lyapunov(&closed.transpose(), &self.sigma0)
    }

    /// Policy gradient `∇C(K) = 2((R + BᵀP_KB)K − BᵀP_KA) Σ_K`.
    pub fn exact_gradient(&self, k: &Matrix) -> Result<Matrix> {
        let p = self.value_matrix(k)?;
        let sigma_k = self.state_covariance(k)?;
        let bt = self.b.transpose();
        let gram = &self.r + &(&(&bt * &p) * &self.b);
        let e = &(&gram * k) - &(&(&bt * &p) * &self.a);
        Ok((&e * &sigma_k).scale(2.0))
    }

    /// Model-based optimum via the Riccati equation: `(P, K*)`.
    pub fn optimal_gain(&self) -> Result<(Matrix, Matrix)> {
        linalg::solve_dare(&self.a, &self.b, &self.q, &self.r)
    }

    pub fn check_state(&self, x0: &[f64]) -> Result<()> {
        if x0.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "initial state length",
                left: (self.state_dim(), 1),
                right: (x0.len(), 1),
            });
        }
        Ok(())
    }
}

/// Fixed reference for the normalized optimality gap
/// `(c(K) − c(K*)) / (c(K₀) − c(K*))` with `c(K) = x₀ᵀP_Kx₀`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapBaseline {
    pub x0: Vec<f64>,
    pub initial_cost: f64,
    pub optimal_cost: f64,
}

impl GapBaseline {
    pub fn new(sys: &LinearQuadraticSystem, k0: &Matrix, kstar: &Matrix, x0: &[f64]) -> Result<Self> {
        let initial_cost = sys.cost_from_initial_state(k0, x0)?;
        let optimal_cost = sys.cost_from_initial_state(kstar, x0)?;
        let denominator = initial_cost - optimal_cost;
        if !(denominator > DEGENERATE_BASELINE) {
            return Err(Error::DegenerateBaseline { denominator });
        }
        Ok(Self {
            x0: x0.to_vec(),
            initial_cost,
            optimal_cost,
        })
    }

    pub fn initial_gap(&self) -> f64 {
        self.initial_cost - self.optimal_cost
    }

    pub fn gap(&self, sys: &LinearQuadraticSystem, k: &Matrix) -> Result<f64> {
        Ok(self.gap_from_value(&sys.value_matrix(k)?))
    }

    pub fn gap_from_value(&self, p: &Matrix) -> f64 {
        (p.quadratic_form(&self.x0) - self.optimal_cost) / self.initial_gap()
    }
}

pub fn normalized_gap(
    sys: &LinearQuadraticSystem,
    k: &Matrix,
    k0: &Matrix,
    kstar: &Matrix,
    x0: &[f64],
) -> Result<f64> {
    GapBaseline::new(sys, k0, kstar, x0)?.gap(sys, k)
}
