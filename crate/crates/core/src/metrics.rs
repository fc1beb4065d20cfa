//! Confusion counts, ratio metrics, ROC/AUC and repeated-split intervals.
//!
//! The anomaly class (label 0) is the positive class everywhere. Ratios with
//! a zero denominator are absent (`None`) rather than zero.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Label;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub ta: u64,
    pub fa: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.ta + self.fa + self.tn + self.fn_
    }

    /// Share of true anomalies predicted normal.
    pub fn fn_fraction(&self) -> Option<f64> {
        ratio(self.fn_, self.ta + self.fn_)
    }

    /// Share of true normals predicted anomalous.
    pub fn fa_fraction(&self) -> Option<f64> {
        ratio(self.fa, self.fa + self.tn)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn confusion(predicted: &[Label], truth: &[Label]) -> Result<Confusion> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    let mut c = Confusion::default();
    for (p, t) in predicted.iter().zip(truth) {
        match (t, p) {
            (Label::Anomaly, Label::Anomaly) => c.ta += 1,
            (Label::Anomaly, Label::Normal) => c.fn_ += 1,
            (Label::Normal, Label::Anomaly) => c.fa += 1,
            (Label::Normal, Label::Normal) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
}

pub fn compute_metrics(c: &Confusion) -> Metrics {
    let precision = ratio(c.ta, c.ta + c.fa);
    let recall = ratio(c.ta, c.ta + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Metrics {
        accuracy: ratio(c.ta + c.tn, c.total()),
        precision,
        recall,
        specificity: ratio(c.tn, c.tn + c.fa),
        f1,
        auc: None,
    }
}

fn class_counts(truth: &[Label]) -> (usize, usize) {
    let anomalies = truth.iter().filter(|&&l| l == Label::Anomaly).count();
    (anomalies, truth.len() - anomalies)
}

/// Area under the ROC curve with anomalies as positives and higher scores
/// more anomalous, via mid-ranks (Mann-Whitney U).
pub fn roc_auc(scores: &[f64], truth: &[Label]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: truth.len(),
        });
    }
    let (pos, neg) = class_counts(truth);
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass("ROC AUC"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum keeps mid-ranks integral.
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            if truth[k] == Label::Anomaly {
                twice_rank_sum += twice_mid;
            }
        }
        i = j + 1;
    }
    let pos = pos as u64;
    let twice_u = twice_rank_sum - pos * (pos + 1);
    Ok(twice_u as f64 / (2 * pos * neg as u64) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub false_anomaly_rate: f64,
    pub true_anomaly_rate: f64,
}

/// ROC curve points from the strictest threshold downwards; a point is
/// emitted for each distinct score, predicting anomaly when `score >= threshold`.
pub fn roc_curve(scores: &[f64], truth: &[Label]) -> Result<Vec<RocPoint>> {
    if scores.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: truth.len(),
        });
    }
    let (pos, neg) = class_counts(truth);
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass("ROC curve"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        false_anomaly_rate: 0.0,
        true_anomaly_rate: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (n, &k) in order.iter().enumerate() {
        match truth[k] {
            Label::Anomaly => tp += 1,
            Label::Normal => fp += 1,
        }
        let last_of_tie = order.get(n + 1).is_none_or(|&next| scores[next] != scores[k]);
        if last_of_tie {
            points.push(RocPoint {
                threshold: scores[k],
                false_anomaly_rate: fp as f64 / neg as f64,
                true_anomaly_rate: tp as f64 / pos as f64,
            });
        }
    }
    Ok(points)
}

/// Mean and 95% normal-approximation half-width of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub half_width: f64,
    pub samples: usize,
}

impl Interval {
    pub fn from_samples(values: &[f64]) -> Option<Interval> {
        let n = values.len();
        if n < 2 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        Some(Interval {
            mean,
            half_width: 1.96 * (var / n as f64).sqrt(),
            samples: n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricIntervals {
    pub method: String,
    pub repeats: usize,
    pub accuracy: Option<Interval>,
    pub precision: Option<Interval>,
    pub recall: Option<Interval>,
    pub specificity: Option<Interval>,
    pub f1: Option<Interval>,
    pub auc: Option<Interval>,
}

pub const CI_METHOD: &str = "repeated seeded splits, mean +/- 1.96 s/sqrt(n)";

impl MetricIntervals {
    /// Summarises metric samples; repeats where a metric is absent are
    /// left out of that metric's interval.
    pub fn from_samples(samples: &[Metrics]) -> MetricIntervals {
        let pick = |f: fn(&Metrics) -> Option<f64>| {
            let v: Vec<f64> = samples.iter().filter_map(f).collect();
            Interval::from_samples(&v)
        };
        MetricIntervals {
            method: CI_METHOD.to_string(),
            repeats: samples.len(),
            accuracy: pick(|m| m.accuracy),
            precision: pick(|m| m.precision),
            recall: pick(|m| m.recall),
            specificity: pick(|m| m.specificity),
            f1: pick(|m| m.f1),
            auc: pick(|m| m.auc),
        }
    }
}

/// SplitMix64 step; used to derive independent per-repeat seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `evaluate` once per derived seed and summarises the results.
pub fn reshuffle_ci<F>(evaluate: F, repeats: usize, seed: u64) -> Result<MetricIntervals>
where
    F: Fn(u64) -> Result<Metrics> + Sync,
{
    if repeats < 2 {
        return Err(Error::InvalidConfig(format!(
            "reshuffle_ci needs at least 2 repeats, got {repeats}"
        )));
    }
    let samples = (0..repeats as u64)
        .into_par_iter()
        .map(|r| evaluate(derive_seed(seed, r)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricIntervals::from_samples(&samples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    /// Resampling interval in seconds; absent when no resampling was applied.
    pub resample_interval: Option<i64>,
    pub confusion: Confusion,
    pub metrics: Metrics,
    pub ci: Option<MetricIntervals>,
    pub runtime_s: Option<f64>,
    pub fn_fraction: Option<f64>,
    pub fa_fraction: Option<f64>,
    pub parameters: String,
}

impl ModelReport {
    pub fn new(model: &str, resample_interval: Option<i64>, confusion: Confusion, auc: Option<f64>) -> ModelReport {
        let mut metrics = compute_metrics(&confusion);
        metrics.auc = auc;
        ModelReport {
            model: model.to_string(),
            resample_interval,
            confusion,
            metrics,
            ci: None,
            runtime_s: None,
            fn_fraction: confusion.fn_fraction(),
            fa_fraction: confusion.fa_fraction(),
            parameters: String::new(),
        }
    }
}

fn pct(v: Option<f64>, ci: Option<Interval>) -> String {
    match (v, ci) {
        (Some(v), Some(ci)) => format!("{:.2} ± {:.2}", 100.0 * v, 100.0 * ci.half_width),
        (Some(v), None) => format!("{:.2}", 100.0 * v),
        (None, _) => String::new(),
    }
}

/// Summary table with one row per model, values in percent.
pub fn write_summary_csv<W: Write>(reports: &[ModelReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "classifier",
        "resampling",
        "accuracy",
        "recall",
        "specificity",
        "precision",
        "f1",
        "auc",
        "parameters",
        "train_time_min",
    ])?;
    for r in reports {
        let m = &r.metrics;
        let ci = r.ci.as_ref();
        w.write_record([
            r.model.clone(),
            r.resample_interval
                .map_or_else(|| "none".to_string(), |s| format!("{s}s")),
            pct(m.accuracy, ci.and_then(|c| c.accuracy)),
            pct(m.recall, ci.and_then(|c| c.recall)),
            pct(m.specificity, ci.and_then(|c| c.specificity)),
            pct(m.precision, ci.and_then(|c| c.precision)),
            pct(m.f1, ci.and_then(|c| c.f1)),
            pct(m.auc, ci.and_then(|c| c.auc)),
            r.parameters.clone(),
            r.runtime_s.map(|s| format!("{:.2}", s / 60.0)).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
