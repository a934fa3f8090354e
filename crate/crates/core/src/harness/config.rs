use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithms::{Problem, RunConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::lqr::LinearQuadraticSystem;

/// On-disk system description. Matrices are row-major nested arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "Sigma0")]
    pub sigma0: Vec<Vec<f64>>,
    #[serde(rename = "K0", default, skip_serializing_if = "Option::is_none")]
    pub k0: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

/// A validated instance together with its starting gain and gap reference state.
#[derive(Clone, Debug)]
pub struct LoadedSystem {
    pub system: LinearQuadraticSystem,
    pub k0: Matrix,
    pub x0: Vec<f64>,
}

impl LoadedSystem {
    pub fn problem(&self) -> Result<Problem> {
        Problem::new(self.system.clone(), self.k0.clone(), self.x0.clone())
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<Matrix> {
    Matrix::from_rows(rows).map_err(|e| Error::Parse(format!("{name}: {e}")))
}

impl SystemFile {
    /// Validates the matrices. A missing `K0` defaults to zero, a missing `x0`
    /// to the all-ones vector.
    pub fn resolve(&self) -> Result<LoadedSystem> {
        let system = LinearQuadraticSystem::new(
            matrix("A", &self.a)?,
            matrix("B", &self.b)?,
            matrix("Q", &self.q)?,
            matrix("R", &self.r)?,
            matrix("Sigma0", &self.sigma0)?,
        )?;
        let (m, n) = system.gain_shape();
        let k0 = match &self.k0 {
            Some(rows) => matrix("K0", rows)?,
            None => Matrix::zeros(m, n),
        };
        system.check_gain(&k0)?;
        let x0 = self.x0.clone().unwrap_or_else(|| vec![1.0; n]);
        system.check_state(&x0)?;
        Ok(LoadedSystem { system, k0, x0 })
    }
}

pub fn parse_system(json: &str) -> Result<LoadedSystem> {
    let file: SystemFile = serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))?;
    file.resolve()
}

pub fn load_system(path: impl AsRef<Path>) -> Result<LoadedSystem> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_system(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledRun {
    pub label: String,
    #[serde(flatten)]
    pub config: RunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// System file; relative paths are taken from the config file's directory.
    pub system: PathBuf,
    pub seeds: Vec<u64>,
    pub runs: Vec<LabeledRun>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub emit_svg: bool,
}

fn valid_label(label: &str) -> bool {
    !label.is_empty()
        && label
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
}

impl ExperimentConfig {
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
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        if self.runs.is_empty() {
            return Err(Error::InvalidConfig("runs must not be empty".into()));
        }
        let mut seen = BTreeSet::new();
        for run in &self.runs {
            if !valid_label(&run.label) {
                return Err(Error::InvalidConfig(format!(
                    "label {:?} must be non-empty and use only [A-Za-z0-9_.-]",
                    run.label
                )));
            }
            if !seen.insert(run.label.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate label {:?}", run.label)));
            }
            run.config.validate()?;
        }
        Ok(())
    }
}
