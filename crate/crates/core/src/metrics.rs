//! Ranking-quality and convergence metrics.

use std::collections::HashMap;
use std::hash::Hash;
use std::io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Indices ordered by descending value, ties broken by lower index.
pub fn argsort_desc(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Number of items in the top `p` fraction of `n`, i.e. `ceil(p * n)`.
///
/// Products that land within 1e-9 above an integer are treated as that
/// integer, so `0.1 * 30` gives 3 rather than 4.
pub fn cutoff_depth(p: f64, n: usize) -> usize {
    let raw = p * n as f64;
    (raw - 1e-9).ceil().max(0.0) as usize
}

fn positions<T: Eq + Hash>(ranking: &[T]) -> HashMap<&T, usize> {
    ranking.iter().enumerate().map(|(i, x)| (x, i)).collect()
}

/// Kendall rank correlation between two strict rankings of the same items.
pub fn kendall_tau<T: Eq + Hash>(r1: &[T], r2: &[T]) -> Result<f64> {
    let n = r1.len();
    if n < 2 {
        return Err(Error::structural("kendall_tau needs at least 2 items"));
    }
    if !crate::model::is_permutation_of(r2, r1) {
        return Err(Error::structural("rankings cover different item sets"));
    }
    let pos2 = positions(r2);
    let mapped: Vec<usize> = r1.iter().map(|x| pos2[x]).collect();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            if mapped[i] < mapped[j] {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok((concordant - discordant) as f64 / pairs)
}

/// NDCG at depth `ceil(p * N)` with binary relevance: an item is relevant
/// iff it sits in the reference's top `ceil(p * N)`.
pub fn ndcg_at<T: Eq + Hash>(predicted: &[T], reference: &[T], p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::structural(format!("cutoff {p} outside (0, 1]")));
    }
    if !crate::model::is_permutation_of(predicted, reference) {
        return Err(Error::structural("rankings cover different item sets"));
    }
    let depth = cutoff_depth(p, reference.len());
    if depth < 1 {
        return Err(Error::structural("cutoff selects no items"));
    }
    let relevant: std::collections::HashSet<&T> = reference[..depth].iter().collect();
    let discount = |pos: usize| 1.0 / ((pos + 2) as f64).log2();
    let dcg: f64 = predicted[..depth]
        .iter()
        .enumerate()
        .filter(|(_, x)| relevant.contains(x))
        .map(|(j, _)| discount(j))
        .fold(0.0, |acc, g| acc + g);
    let ideal: f64 = (0..depth).map(discount).sum();
    Ok(dcg / ideal)
}

/// Euclidean norm of the change between two utility vectors. Fitted states
/// are already zero-centered, so no further gauge fixing happens here.
pub fn delta_u(current: &[f64], previous: &[f64]) -> Result<f64> {
    if current.len() != previous.len() {
        return Err(Error::structural(format!(
            "utility vectors differ in length ({} vs {})",
            current.len(),
            previous.len()
        )));
    }
    Ok(current
        .iter()
        .zip(previous)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Min-max scaling to [0, 1]. A constant series maps to zeros.
pub fn normalize_series(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
}

/// Every (winner, loser) pair implied by a strongest-first ranking.
pub fn pairwise_expansion<T: Clone>(ranking: &[T]) -> Vec<(T, T)> {
    let mut out = Vec::with_capacity(ranking.len() * ranking.len().saturating_sub(1) / 2);
    for (i, winner) in ranking.iter().enumerate() {
        for loser in &ranking[i + 1..] {
            out.push((winner.clone(), loser.clone()));
        }
    }
    out
}

/// Metrics emitted after one tournament iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    /// Absent at iteration 1.
    pub kendall_tau_successive: Option<f64>,
    pub delta_u: f64,
    /// One value per configured cutoff, present only with a reference ranking.
    pub ndcg: Option<Vec<f64>>,
    pub kendall_tau_vs_reference: Option<f64>,
}

/// Column label for a cutoff fraction: `0.1 -> "10"`, `0.125 -> "12.5"`.
pub fn cutoff_label(p: f64) -> String {
    let pct = p * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        let s = format!("{pct:.6}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

pub fn format_value(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

fn format_opt(v: Option<f64>) -> String {
    v.map(format_value).unwrap_or_default()
}

/// Writes `metrics.csv`. Reference columns appear only when at least one
/// record carries reference metrics.
pub fn write_metrics_csv<W: io::Write>(out: W, cutoffs: &[f64], records: &[MetricsRecord]) -> Result<()> {
    let with_reference = records.iter().any(|r| r.ndcg.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["iteration".to_string(), "kendall_tau_successive".into(), "delta_u".into()];
    if with_reference {
        header.extend(cutoffs.iter().map(|p| format!("ndcg_{}", cutoff_label(*p))));
        header.push("kendall_tau_vs_reference".into());
    }
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.iteration.to_string(),
            format_opt(r.kendall_tau_successive),
            format_value(r.delta_u),
        ];
        if with_reference {
            match &r.ndcg {
                Some(values) => row.extend(values.iter().map(|v| format_value(*v))),
                None => row.extend(cutoffs.iter().map(|_| String::new())),
            }
            row.push(format_opt(r.kendall_tau_vs_reference));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// A parsed `metrics.csv`: header names and optional cells per row.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl MetricsTable {
    pub fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn ndcg_columns(&self) -> Vec<&str> {
        self.columns
            .iter()
            .filter(|c| c.starts_with("ndcg_"))
            .map(String::as_str)
            .collect()
    }
}

pub fn read_metrics_csv<R: io::Read>(input: R) -> Result<MetricsTable> {
    let mut reader = csv::Reader::from_reader(input);
    let columns: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|cell| {
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>().map(Some).map_err(|e| Error::Parse {
                        line: i + 2,
                        message: format!("bad number {cell:?}: {e}"),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(MetricsTable { columns, rows })
}
