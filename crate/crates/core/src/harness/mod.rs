//! File formats, experiment orchestration and reports behind the CLI.

pub mod config;
pub mod experiment;
pub mod probe;
pub mod svg;
pub mod trace_io;

use std::fmt::Write;
use std::path::Path;

pub use config::{load_system, parse_system, ExperimentConfig, LabeledRun, LoadedSystem, SystemFile};
pub use experiment::{run_experiment, ExperimentOutput, ExperimentSummary, LabelSummary, SeedSummary};
pub use probe::{run_probes, ProbeConfig, ProbeSpec};

use crate::error::Result;
use crate::linalg::Matrix;

/// Riccati solution of a loaded system.
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub kstar: Matrix,
    pub closed_loop_radius: f64,
    pub initial_cost: f64,
    pub optimal_cost: f64,
}

impl SolveReport {
    pub fn new(loaded: &LoadedSystem) -> Result<Self> {
        let sys = &loaded.system;
        let (p, kstar) = sys.optimal_gain()?;
        Ok(Self {
            closed_loop_radius: sys.closed_loop_radius(&kstar)?,
            initial_cost: sys.cost(&loaded.k0)?,
            optimal_cost: p.frobenius_dot(sys.sigma0()),
            kstar,
        })
    }

    pub fn initial_gap(&self) -> f64 {
        self.initial_cost - self.optimal_cost
    }

    /// Human-readable report, 12 significant digits.
    pub fn render(&self) -> String {
        let fmt = |x: f64| format!("{x:.11e}");
        let mut out = String::new();
        let _ = writeln!(out, "K* =");
        for row in self.kstar.to_rows() {
            let cells: Vec<String> = row.into_iter().map(fmt).collect();
            let _ = writeln!(out, "  [{}]", cells.join(", "));
        }
        let _ = writeln!(out, "rho(A - B K*) = {}", fmt(self.closed_loop_radius));
        let _ = writeln!(out, "C(K0) = {}", fmt(self.initial_cost));
        let _ = writeln!(out, "C(K*) = {}", fmt(self.optimal_cost));
        let _ = writeln!(out, "Delta0 = {}", fmt(self.initial_gap()));
        out
    }
}

pub fn solve_command(path: impl AsRef<Path>) -> Result<SolveReport> {
    SolveReport::new(&load_system(path)?)
}
