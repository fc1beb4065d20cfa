//! Percentile threshold search over reconstruction errors.
//!
//! For each integer percentile the threshold is the nearest-rank percentile
//! of the validation errors (normal and anomalous rows together) and rows
//! with error strictly above it are anomalies. The chosen row maximises
//! recall, then precision among those, then specificity; remaining ties go
//! to the smallest percentile.

use std::cmp::Ordering;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detectors::labels_from_scores;
use crate::error::{Error, Result};
use crate::features::Label;
use crate::metrics::{compute_metrics, confusion, Confusion, Metrics};

pub const TABLE_HEADER: [&str; 7] = [
    "Percentile",
    "Optimal Threshold",
    "precision",
    "recall",
    "F1-score",
    "specificity",
    "accuracy",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileRow {
    pub percentile: u32,
    pub threshold: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
    /// Present when the row was computed rather than replayed from a file.
    pub confusion: Option<Confusion>,
}

impl PercentileRow {
    pub fn metrics(&self) -> Metrics {
        Metrics {
            accuracy: self.accuracy,
            precision: self.precision,
            recall: self.recall,
            specificity: self.specificity,
            f1: self.f1,
            auc: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PercentileTable {
    pub rows: Vec<PercentileRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub percentile: u32,
    pub threshold: f64,
    pub metrics: Metrics,
    pub confusion: Option<Confusion>,
    /// Every percentile that ties with the chosen one on all three keys.
    pub ties: Vec<u32>,
}

/// Nearest-rank percentile of ascending `sorted`: the value at rank
/// `ceil(p / 100 * n)`, with rank at least 1.
pub fn nearest_rank(sorted: &[f64], p: u32) -> f64 {
    let n = sorted.len();
    let rank = ((p as usize * n).div_ceil(100)).clamp(1, n);
    sorted[rank - 1]
}

pub fn build_table(errors: &[f64], truth: &[Label], percentiles: &[u32]) -> Result<PercentileTable> {
    if errors.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: errors.len(),
            right: truth.len(),
        });
    }
    let anomalies = truth.iter().filter(|&&l| l == Label::Anomaly).count();
    if anomalies == 0 || anomalies == truth.len() {
        return Err(Error::SingleClass("threshold validation set"));
    }
    if let Some(&p) = percentiles.iter().find(|&&p| p == 0 || p > 100) {
        return Err(Error::InvalidConfig(format!("percentile {p} outside 1..=100")));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rows = percentiles
        .par_iter()
        .map(|&p| {
            let threshold = nearest_rank(&sorted, p);
            let c = confusion(&labels_from_scores(errors, threshold), truth)?;
            let m = compute_metrics(&c);
            Ok(PercentileRow {
                percentile: p,
                threshold,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                specificity: m.specificity,
                accuracy: m.accuracy,
                confusion: Some(c),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PercentileTable { rows })
}

pub fn default_percentiles() -> Vec<u32> {
    (1..=100).collect()
}

/// Absent values rank below every present value.
fn cmp_opt(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => Ordering::Greater,
        (None, Some(_)) => Ordering::Less,
        (None, None) => Ordering::Equal,
    }
}

fn best_by(rows: Vec<&PercentileRow>, key: fn(&PercentileRow) -> Option<f64>) -> Vec<&PercentileRow> {
    let best = rows.iter().map(|r| key(r)).max_by(|a, b| cmp_opt(*a, *b)).flatten();
    rows.into_iter()
        .filter(|r| cmp_opt(key(r), best) == Ordering::Equal)
        .collect()
}

pub fn select_threshold(table: &PercentileTable) -> Result<ThresholdResult> {
    if table.rows.is_empty() {
        return Err(Error::EmptyInput("percentile table"));
    }
    let by_recall = best_by(table.rows.iter().collect(), |r| r.recall);
    let by_precision = best_by(by_recall, |r| r.precision);
    let mut tied = best_by(by_precision, |r| r.specificity);
    tied.sort_by_key(|r| r.percentile);
    let chosen = tied[0];
    Ok(ThresholdResult {
        percentile: chosen.percentile,
        threshold: chosen.threshold,
        metrics: chosen.metrics(),
        confusion: chosen.confusion,
        ties: tied.iter().map(|r| r.percentile).collect(),
    })
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl PercentileTable {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TABLE_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.percentile.to_string(),
                r.threshold.to_string(),
                opt_cell(r.precision),
                opt_cell(r.recall),
                opt_cell(r.f1),
                opt_cell(r.specificity),
                opt_cell(r.accuracy),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table in the layout written by [`PercentileTable::write_csv`].
    /// Empty metric cells are absent values.
    pub fn read_csv<R: Read>(reader: R) -> Result<PercentileTable> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = r.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let idx: Vec<usize> = TABLE_HEADER.iter().map(|h| col(h)).collect::<Result<_>>()?;
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let cell = |k: usize| rec.get(idx[k]).unwrap_or("");
            let num = |k: usize| -> Result<Option<f64>> {
                let s = cell(k);
                if s.is_empty() {
                    return Ok(None);
                }
                s.parse::<f64>().map(Some).map_err(|_| {
                    Error::InvalidData(format!(
                        "row {}: cannot parse {:?} in column {}",
                        line + 1,
                        s,
                        TABLE_HEADER[k]
                    ))
                })
            };
            let percentile = cell(0)
                .parse::<f64>()
                .ok()
                .filter(|p| p.fract() == 0.0 && *p >= 1.0 && *p <= 100.0)
                .ok_or_else(|| Error::InvalidData(format!("row {}: bad percentile {:?}", line + 1, cell(0))))?;
            rows.push(PercentileRow {
                percentile: percentile as u32,
                threshold: num(1)?.ok_or_else(|| Error::InvalidData(format!("row {}: missing threshold", line + 1)))?,
                precision: num(2)?,
                recall: num(3)?,
                f1: num(4)?,
                specificity: num(5)?,
                accuracy: num(6)?,
                confusion: None,
            });
        }
        Ok(PercentileTable { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Anomaly as A, Normal as N};

    fn row(p: u32, r: f64, pr: f64, s: f64) -> PercentileRow {
        PercentileRow {
            percentile: p,
            threshold: p as f64,
            precision: Some(pr),
            recall: Some(r),
            f1: None,
            specificity: Some(s),
            accuracy: None,
            confusion: None,
        }
    }

    #[test]
    fn lexicographic_choice() {
        let t = PercentileTable {
            rows: vec![row(1, 0.9, 0.99, 1.0), row(2, 1.0, 0.80, 0.7), row(3, 1.0, 0.95, 0.9)],
        };
        let r = select_threshold(&t).unwrap();
        assert_eq!(r.percentile, 3);
        assert_eq!(r.ties, vec![3]);
    }

    #[test]
    fn full_ties_pick_smallest_percentile() {
        let t = PercentileTable {
            rows: vec![row(7, 1.0, 0.5, 0.5), row(4, 1.0, 0.5, 0.5), row(9, 0.2, 1.0, 1.0)],
        };
        let r = select_threshold(&t).unwrap();
        assert_eq!(r.percentile, 4);
        assert_eq!(r.ties, vec![4, 7]);
    }

    #[test]
    fn absent_precision_ranks_lowest() {
        let mut degenerate = row(1, 1.0, 0.0, 0.0);
        degenerate.precision = None;
        let t = PercentileTable {
            rows: vec![degenerate, row(2, 1.0, 0.1, 0.0)],
        };
        assert_eq!(select_threshold(&t).unwrap().percentile, 2);
        assert!(select_threshold(&PercentileTable::default()).is_err());
    }

    #[test]
    fn nearest_rank_definition() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 1), 1.0);
        assert_eq!(nearest_rank(&v, 10), 1.0);
        assert_eq!(nearest_rank(&v, 11), 2.0);
        assert_eq!(nearest_rank(&v, 50), 5.0);
        assert_eq!(nearest_rank(&v, 100), 10.0);
    }

    #[test]
    fn separated_errors_reach_perfect_row() {
        let errors = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
        let truth = [N, N, N, N, N, N, N, N, A, A];
        let t = build_table(&errors, &truth, &default_percentiles()).unwrap();
        let r = select_threshold(&t).unwrap();
        assert_eq!(r.metrics.recall, Some(1.0));
        assert_eq!(r.metrics.precision, Some(1.0));
        assert_eq!(r.threshold, 0.8);
        assert_eq!(r.percentile, 71);
    }

    #[test]
    fn identical_errors_give_identical_rows() {
        let t = build_table(&[0.5; 6], &[A, N, N, A, N, N], &default_percentiles()).unwrap();
        assert!(t.rows.iter().all(|r| r.confusion == t.rows[0].confusion));
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(matches!(
            build_table(&[0.1, 0.2], &[N, N], &[50]),
            Err(Error::SingleClass(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let errors = [0.3, 0.1, 0.7, 0.2, 0.9];
        let truth = [N, N, A, N, A];
        let t = build_table(&errors, &truth, &default_percentiles()).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = PercentileTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.rows.len(), 100);
        for (a, b) in t.rows.iter().zip(&back.rows) {
            assert_eq!(a.metrics(), b.metrics());
            assert_eq!(a.threshold, b.threshold);
        }
        assert_eq!(
            select_threshold(&back).unwrap().percentile,
            select_threshold(&t).unwrap().percentile
        );
    }
}
