//! Result rows (JSON lines) and per-(dataset, method) summary statistics.

use crate::pipeline::TrialResult;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

/// Five-number summary plus mean and sample standard deviation of the
/// accuracy deltas of one (dataset, method) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub method: String,
    /// Completed (non-error) trials.
    pub n: usize,
    pub mean_delta: f64,
    pub std_delta: f64,
    /// Paper-style "mean ± std" rendering at three decimals.
    pub formatted: String,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean_acc_unlabelled: f64,
    pub errors: usize,
}

pub fn write_jsonl<W: Write>(rows: &[TrialResult], mut writer: W) -> std::io::Result<()> {
    for row in rows {
        serde_json::to_writer(&mut writer, row)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(reader: R) -> std::io::Result<Vec<TrialResult>> {
    let mut rows = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: TrialResult = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        rows.push(row);
    }
    Ok(rows)
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Aggregate rows into one summary per (dataset, method), ordered by key.
/// Error rows count into `errors` and are excluded from the statistics.
pub fn summarize(rows: &[TrialResult]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(String, String), (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    for row in rows {
        let cell = cells
            .entry((row.dataset.clone(), row.method.clone()))
            .or_default();
        match (row.error.as_ref(), row.delta_unlabelled, row.acc_unlabelled) {
            (None, Some(delta), Some(acc)) => {
                cell.0.push(delta);
                cell.1.push(acc);
            }
            _ => cell.2 += 1,
        }
    }
    cells
        .into_iter()
        .map(|((dataset, method), (mut deltas, accs, errors))| {
            deltas.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = deltas.len();
            if n == 0 {
                return SummaryRow {
                    dataset,
                    method,
                    n,
                    mean_delta: f64::NAN,
                    std_delta: f64::NAN,
                    formatted: "-".to_string(),
                    min: f64::NAN,
                    q1: f64::NAN,
                    median: f64::NAN,
                    q3: f64::NAN,
                    max: f64::NAN,
                    mean_acc_unlabelled: f64::NAN,
                    errors,
                };
            }
            let mean = deltas.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64)
                    .sqrt()
            } else {
                0.0
            };
            SummaryRow {
                dataset,
                method,
                n,
                mean_delta: mean,
                std_delta: std,
                formatted: format!("{mean:.3} ± {std:.3}"),
                min: deltas[0],
                q1: quantile_sorted(&deltas, 0.25),
                median: quantile_sorted(&deltas, 0.5),
                q3: quantile_sorted(&deltas, 0.75),
                max: deltas[n - 1],
                mean_acc_unlabelled: accs.iter().sum::<f64>() / n as f64,
                errors,
            }
        })
        .collect()
}

/// Summary table as CSV (stable column order, full-precision floats).
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "dataset,method,n,mean_delta,std_delta,formatted,min,q1,median,q3,max,mean_acc_unlabelled,errors\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.dataset,
            r.method,
            r.n,
            r.mean_delta,
            r.std_delta,
            r.formatted,
            r.min,
            r.q1,
            r.median,
            r.q3,
            r.max,
            r.mean_acc_unlabelled,
            r.errors
        ));
    }
    out
}

/// Raw deltas as CSV for external plotting.
pub fn deltas_csv(rows: &[TrialResult]) -> String {
    let mut out = String::from("dataset,method,trial,delta_unlabelled,acc_unlabelled\n");
    for r in rows {
        if let (None, Some(d), Some(a)) = (r.error.as_ref(), r.delta_unlabelled, r.acc_unlabelled)
        {
            out.push_str(&format!("{},{},{},{},{}\n", r.dataset, r.method, r.trial, d, a));
        }
    }
    out
}
