use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algorithms::{run, Problem, Termination, Trace};
use crate::error::Result;
use crate::exec::Execution;
use crate::harness::config::{load_system, ExperimentConfig};
use crate::harness::svg::{log_line_chart, Series};
use crate::harness::trace_io::{median, median_curve, write_median, write_trace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub termination: Termination,
    pub final_gap: Option<f64>,
    pub cost_evaluations: u64,
    pub one_point_queries: u64,
    pub two_point_queries: u64,
    pub trace_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub algorithm: String,
    /// Largest per-seed count; all seeds agree unless a run stopped early.
    pub cost_evaluations: u64,
    pub one_point_queries: u64,
    pub two_point_queries: u64,
    pub final_gap_median: Option<f64>,
    pub termination_counts: BTreeMap<String, usize>,
    pub per_seed: Vec<SeedSummary>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExperimentSummary {
    pub labels: BTreeMap<String, LabelSummary>,
}

impl ExperimentSummary {
    pub fn all_completed(&self) -> bool {
        self.labels
            .values()
            .flat_map(|l| &l.per_seed)
            .all(|s| s.termination == Termination::Completed)
    }
}

/// Traces of one experiment, in config order (runs outer, seeds inner).
pub struct ExperimentOutput {
    pub summary: ExperimentSummary,
    pub traces: Vec<(String, u64, Trace)>,
    pub files: Vec<PathBuf>,
}

pub fn trace_file_name(label: &str, seed: u64) -> String {
    format!("trace_{label}_seed{seed}.csv")
}

/// Runs every (run, seed) pair, then writes traces, median curves,
/// `summary.json` and optionally `median_gap.svg` into `cfg.output_dir`.
///
/// `exec` schedules the pairs; file contents do not depend on it.
pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let problem = load_system(&cfg.system)?.problem()?;
    let traces = run_pairs(&problem, cfg, exec)?;
    let files = write_outputs(cfg, &traces)?;
    Ok(ExperimentOutput {
        summary: summarize(cfg, &traces),
        traces,
        files,
    })
}

pub fn run_pairs(problem: &Problem, cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<(String, u64, Trace)>> {
    let seeds = cfg.seeds.len();
    let results = exec.map_indexed(cfg.runs.len() * seeds, |i| {
        let entry = &cfg.runs[i / seeds];
        let seed = cfg.seeds[i % seeds];
        run(problem, &entry.config.clone().with_seed(seed)).map(|t| (entry.label.clone(), seed, t))
    });
    results.into_iter().collect()
}

pub fn summarize(cfg: &ExperimentConfig, traces: &[(String, u64, Trace)]) -> ExperimentSummary {
    let mut labels = BTreeMap::new();
    for entry in &cfg.runs {
        let runs: Vec<_> = traces.iter().filter(|(l, _, _)| *l == entry.label).collect();
        let per_seed: Vec<SeedSummary> = runs
            .iter()
            .map(|(label, seed, t)| SeedSummary {
                seed: *seed,
                termination: t.termination.clone(),
                final_gap: t.final_gap(),
                cost_evaluations: t.ledger.cost_evaluations(),
                one_point_queries: t.ledger.one_point_queries(),
                two_point_queries: t.ledger.two_point_queries(),
                trace_file: trace_file_name(label, *seed),
            })
            .collect();
        let mut termination_counts = BTreeMap::new();
        for s in &per_seed {
            *termination_counts.entry(s.termination.label().to_string()).or_insert(0) += 1;
        }
        let mut gaps: Vec<f64> = per_seed.iter().filter_map(|s| s.final_gap).collect();
        let final_gap_median = (!gaps.is_empty()).then(|| median(&mut gaps));
        let max_of = |f: fn(&SeedSummary) -> u64| per_seed.iter().map(f).max().unwrap_or(0);
        labels.insert(
            entry.label.clone(),
            LabelSummary {
                algorithm: entry.config.algorithm.name().to_string(),
                cost_evaluations: max_of(|s| s.cost_evaluations),
                one_point_queries: max_of(|s| s.one_point_queries),
                two_point_queries: max_of(|s| s.two_point_queries),
                final_gap_median,
                termination_counts,
                per_seed,
            },
        );
    }
    ExperimentSummary { labels }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_outputs(cfg: &ExperimentConfig, traces: &[(String, u64, Trace)]) -> Result<Vec<PathBuf>> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (label, seed, trace) in traces {
        let path = dir.join(trace_file_name(label, *seed));
        write_trace(create(&path)?, &trace.records)?;
        files.push(path);
    }
    let mut curves = Vec::new();
    for entry in &cfg.runs {
        let runs: Vec<&[_]> = traces
            .iter()
            .filter(|(l, _, _)| *l == entry.label)
            .map(|(_, _, t)| t.records.as_slice())
            .collect();
        let curve = median_curve(&runs);
        let path = dir.join(format!("median_{}.csv", entry.label));
        write_median(create(&path)?, &curve)?;
        files.push(path);
        curves.push((entry.label.as_str(), curve));
    }
    let summary_path = dir.join("summary.json");
    let mut json = serde_json::to_string_pretty(&summarize(cfg, traces))?;
    json.push('\n');
    fs::write(&summary_path, json)?;
    files.push(summary_path);
    if cfg.emit_svg {
        let series: Vec<Series> = curves
            .iter()
            .map(|(label, curve)| Series {
                label,
                points: curve.iter().map(|p| (p.global_step as f64, p.normalized_gap)).collect(),
            })
            .collect();
        let path = dir.join("median_gap.svg");
        fs::write(
            &path,
            log_line_chart("Median normalized gap over seeds", "iteration", "normalized gap", &series),
        )?;
        files.push(path);
    }
    Ok(files)
}
