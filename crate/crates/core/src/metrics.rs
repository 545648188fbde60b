//! Monte-Carlo evaluation: coverage probabilities, interval lengths, and
//! bias / standard deviation / RMSE of the point estimates.

use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::bootstrap::IntervalSet;
use crate::error::{Error, Result};
use crate::sim::GroundTruth;

/// One Monte-Carlo repetition's output.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub rep_index: usize,
    pub intervals: IntervalSet,
    pub point_estimate: DVector<f64>,
}

/// Group means of the per-coefficient metrics; `None` when the group is
/// empty.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GroupSummary {
    pub coverage: f64,
    pub mean_length: f64,
    pub bias: f64,
    pub sd: f64,
    pub rmse: f64,
}

/// Per-coefficient metrics over a set of repetitions, plus the large /
/// small group means the summary tables report.
#[derive(Debug, Clone)]
pub struct MetricTable {
    pub coverage: DVector<f64>,
    pub mean_length: DVector<f64>,
    pub bias: DVector<f64>,
    pub sd: DVector<f64>,
    pub rmse: DVector<f64>,
    pub large: Option<GroupSummary>,
    pub small: Option<GroupSummary>,
}

fn check_records(records: &[RunRecord], p: usize) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidScenario("no run records".into()));
    }
    for r in records {
        if r.intervals.lower.len() != p
            || r.intervals.upper.len() != p
            || r.point_estimate.len() != p
        {
            return Err(Error::DimensionMismatch {
                n: p,
                y_len: r.point_estimate.len(),
            });
        }
    }
    Ok(())
}

/// Aggregation order is fixed by `rep_index`, so permuting the record list
/// cannot change a single output bit.
fn ordered(records: &[RunRecord]) -> Vec<&RunRecord> {
    let mut refs: Vec<&RunRecord> = records.iter().collect();
    refs.sort_by_key(|r| r.rep_index);
    refs
}

/// Fraction of repetitions whose interval contains the truth, per
/// coefficient.
pub fn coverage(records: &[RunRecord], truth: &GroundTruth) -> Result<DVector<f64>> {
    let p = truth.beta0.len();
    check_records(records, p)?;
    let reps = records.len() as f64;
    let mut hits = DVector::zeros(p);
    for r in ordered(records) {
        for j in 0..p {
            let b = truth.beta0[j];
            if r.intervals.lower[j] <= b && b <= r.intervals.upper[j] {
                hits[j] += 1.0;
            }
        }
    }
    Ok(hits / reps)
}

fn group_mean(values: &DVector<f64>, members: &[usize]) -> f64 {
    members.iter().map(|&j| values[j]).sum::<f64>() / members.len() as f64
}

fn summarize_group(table: &MetricTable, members: &[usize]) -> Option<GroupSummary> {
    if members.is_empty() {
        return None;
    }
    Some(GroupSummary {
        coverage: group_mean(&table.coverage, members),
        mean_length: group_mean(&table.mean_length, members),
        bias: group_mean(&table.bias, members),
        sd: group_mean(&table.sd, members),
        rmse: group_mean(&table.rmse, members),
    })
}

/// Builds the full metric table. `large_set` is the group of coefficients
/// summarized separately from its complement (the tables' "first s largest"
/// split). The SD uses the population divisor so that
/// `rmse^2 = bias^2 + sd^2` holds exactly.
pub fn summarize(
    records: &[RunRecord],
    truth: &GroundTruth,
    large_set: &[usize],
) -> Result<MetricTable> {
    let p = truth.beta0.len();
    check_records(records, p)?;
    let reps = records.len() as f64;
    let by_rep = ordered(records);

    let mut coverage = DVector::zeros(p);
    let mut mean_length = DVector::zeros(p);
    let mut mean_point = DVector::zeros(p);
    for r in &by_rep {
        for j in 0..p {
            let b = truth.beta0[j];
            if r.intervals.lower[j] <= b && b <= r.intervals.upper[j] {
                coverage[j] += 1.0;
            }
            mean_length[j] += r.intervals.upper[j] - r.intervals.lower[j];
            mean_point[j] += r.point_estimate[j];
        }
    }
    coverage /= reps;
    mean_length /= reps;
    mean_point /= reps;

    let mut var = DVector::zeros(p);
    let mut mse = DVector::zeros(p);
    for r in &by_rep {
        for j in 0..p {
            let dev = r.point_estimate[j] - mean_point[j];
            var[j] += dev * dev;
            let err = r.point_estimate[j] - truth.beta0[j];
            mse[j] += err * err;
        }
    }
    var /= reps;
    mse /= reps;

    let bias = DVector::from_fn(p, |j, _| mean_point[j] - truth.beta0[j]);
    let sd = var.map(f64::sqrt);
    let rmse = mse.map(f64::sqrt);

    let mut table = MetricTable {
        coverage,
        mean_length,
        bias,
        sd,
        rmse,
        large: None,
        small: None,
    };
    let small_set: Vec<usize> = (0..p).filter(|j| !large_set.contains(j)).collect();
    table.large = summarize_group(&table, large_set);
    table.small = summarize_group(&table, &small_set);
    Ok(table)
}

/// Writes the per-coefficient table as CSV, one row per coefficient.
/// Indices are 1-based in the output.
pub fn write_metric_csv<W: Write>(
    out: &mut W,
    method: &str,
    truth: &GroundTruth,
    table: &MetricTable,
    header: bool,
) -> std::io::Result<()> {
    if header {
        writeln!(out, "method,index,beta0,coverage,mean_length,bias,sd,rmse")?;
    }
    for j in 0..truth.beta0.len() {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            method,
            j + 1,
            truth.beta0[j],
            table.coverage[j],
            table.mean_length[j],
            table.bias[j],
            table.sd[j],
            table.rmse[j]
        )?;
    }
    Ok(())
}
