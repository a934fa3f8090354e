//! Trace and median-curve CSV files.
//!
//! Floats are written as `{:.16e}` (17 significant digits) so that parsing a
//! file reproduces every record bit for bit.

use std::io::{Read, Write};

use crate::algorithms::IterationRecord;
use crate::error::{Error, Result};

pub const TRACE_HEADER: [&str; 9] = [
    "global_step",
    "epoch",
    "inner_step",
    "cost",
    "normalized_gap",
    "grad_norm",
    "spectral_radius",
    "cost_evals_cum",
    "two_point_cum",
];

pub const MEDIAN_HEADER: [&str; 4] = ["global_step", "median_normalized_gap", "median_cost", "seeds"];

pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn optional(x: Option<u64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_trace<W: Write>(out: W, records: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in records {
        w.write_record([
            r.global_step.to_string(),
            optional(r.epoch),
            optional(r.inner_step),
            format_float(r.cost),
            format_float(r.normalized_gap),
            format_float(r.grad_norm),
            format_float(r.spectral_radius),
            r.cost_evaluations_cum.to_string(),
            r.two_point_cum.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = row.get(i).ok_or_else(|| Error::Parse(format!("missing column {}", TRACE_HEADER[i])))?;
    raw.parse()
        .map_err(|e| Error::Parse(format!("column {} value {raw:?}: {e}", TRACE_HEADER[i])))
}

fn optional_field(row: &csv::StringRecord, i: usize) -> Result<Option<u64>> {
    match row.get(i) {
        Some("") => Ok(None),
        _ => field(row, i).map(Some),
    }
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<IterationRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::Parse(format!("unexpected trace header {:?}", header)));
    }
    let mut records = Vec::new();
    for row in rd.records() {
        let row = row?;
        records.push(IterationRecord {
            global_step: field(&row, 0)?,
            epoch: optional_field(&row, 1)?,
            inner_step: optional_field(&row, 2)?,
            cost: field(&row, 3)?,
            normalized_gap: field(&row, 4)?,
            grad_norm: field(&row, 5)?,
            spectral_radius: field(&row, 6)?,
            cost_evaluations_cum: field(&row, 7)?,
            two_point_cum: field(&row, 8)?,
        });
    }
    Ok(records)
}

/// One point of a per-label median curve.
#[derive(Clone, Debug, PartialEq)]
pub struct MedianPoint {
    pub global_step: u64,
    pub normalized_gap: f64,
    pub cost: f64,
    /// Seeds that reached this step.
    pub seeds: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median over seeds at every recorded step. Seeds whose run stopped early
/// simply drop out of later steps.
pub fn median_curve(traces: &[&[IterationRecord]]) -> Vec<MedianPoint> {
    let mut steps: Vec<u64> = traces.iter().flat_map(|t| t.iter().map(|r| r.global_step)).collect();
    steps.sort_unstable();
    steps.dedup();
    steps
        .into_iter()
        .map(|step| {
            let at: Vec<&IterationRecord> = traces
                .iter()
                .filter_map(|t| t.binary_search_by_key(&step, |r| r.global_step).ok().map(|i| &t[i]))
                .collect();
            let mut gaps: Vec<f64> = at.iter().map(|r| r.normalized_gap).collect();
            let mut costs: Vec<f64> = at.iter().map(|r| r.cost).collect();
            MedianPoint {
                global_step: step,
                normalized_gap: median(&mut gaps),
                cost: median(&mut costs),
                seeds: at.len(),
            }
        })
        .collect()
}

pub fn write_median<W: Write>(out: W, points: &[MedianPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MEDIAN_HEADER)?;
    for p in points {
        w.write_record([
            p.global_step.to_string(),
            format_float(p.normalized_gap),
            format_float(p.cost),
            p.seeds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
