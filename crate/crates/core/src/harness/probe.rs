use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    estimator_bias_probe, gradient_domination_probe, lipschitz_probe, mean_equality_probe, second_moment_probe,
    variance_reduction_probe, ProbeReport, VarianceProbeParams,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::harness::config::load_system;
use crate::oracle::LqrOracle;

/// One probe to run at the system's `K0` (and `K*` where relevant).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeSpec {
    EstimatorBias { radius: f64, samples: usize },
    MeanEquality { radius: f64, samples: usize },
    SecondMoment { radius: f64, samples: usize },
    GradientDomination { grid_size: usize },
    Lipschitz { max_step: f64, pairs: usize },
    VarianceReduction {
        displacement: f64,
        #[serde(flatten)]
        params: VarianceProbeParams,
        repeats: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub system: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub probes: Vec<ProbeSpec>,
}

impl ProbeConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            if cfg.system.is_relative() {
                cfg.system = dir.join(&cfg.system);
            }
            if cfg.output_dir.is_relative() {
                cfg.output_dir = dir.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }
}

/// Runs the probes in order, each with the config seed, and writes them to
/// `probes.json` in the output directory.
pub fn run_probes(cfg: &ProbeConfig, exec: Execution) -> Result<(Vec<ProbeReport>, PathBuf)> {
    if cfg.probes.is_empty() {
        return Err(Error::InvalidConfig("probes must not be empty".into()));
    }
    let problem = load_system(&cfg.system)?.problem()?;
    let sys = problem.system();
    let k0 = problem.initial_gain();
    let seed = cfg.seed;
    let reports = cfg
        .probes
        .iter()
        .map(|spec| match *spec {
            ProbeSpec::EstimatorBias { radius, samples } => {
                estimator_bias_probe(sys, k0, radius, samples, seed, exec)
            }
            ProbeSpec::MeanEquality { radius, samples } => {
                mean_equality_probe(&LqrOracle::exact(sys), k0, radius, samples, seed, exec)
            }
            ProbeSpec::SecondMoment { radius, samples } => second_moment_probe(sys, k0, radius, samples, seed, exec),
            ProbeSpec::GradientDomination { grid_size } => {
                gradient_domination_probe(sys, problem.optimal_gain(), k0, grid_size, seed)
            }
            ProbeSpec::Lipschitz { max_step, pairs } => lipschitz_probe(sys, k0, max_step, pairs, seed),
            ProbeSpec::VarianceReduction {
                displacement,
                params,
                repeats,
            } => variance_reduction_probe(sys, k0, displacement, params, repeats, seed, exec),
        })
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("probes.json");
    let mut json = serde_json::to_string_pretty(&reports)?;
    json.push('\n');
    fs::write(&path, json)?;
    Ok((reports, path))
}
