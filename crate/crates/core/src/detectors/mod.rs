//! Classical unsupervised detectors: isolation forest, local outlier factor
//! and DBSCAN. All operate on scaled feature vectors; higher scores are more
//! anomalous.

pub mod dbscan;
pub mod iforest;
pub mod lof;
pub mod points;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use dbscan::{dbscan_fit, dbscan_predict, dbscan_scores, DbscanModel};
pub use iforest::{iforest_fit, iforest_predict, iforest_scores, IsoForestModel, IsoForestParams};
pub use lof::{lof_fit, lof_predict, lof_scores, LofModel};
pub use points::{euclidean, KdTree, Points};

use crate::error::Result;
use crate::features::Label;

/// Linear-interpolation quantile of unsorted values, `q` in `[0, 1]`.
pub fn quantile_linear(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Anomaly iff the score is strictly above the threshold.
pub fn labels_from_scores(scores: &[f64], threshold: f64) -> Vec<Label> {
    scores
        .iter()
        .map(|&s| if s > threshold { Label::Anomaly } else { Label::Normal })
        .collect()
}

/// A fitted classical detector, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ClassicalModel {
    IsolationForest(IsoForestModel),
    Lof(LofModel),
    Dbscan(DbscanModel),
}

impl ClassicalModel {
    pub fn name(&self) -> &'static str {
        match self {
            ClassicalModel::IsolationForest(_) => "IF",
            ClassicalModel::Lof(_) => "LOF",
            ClassicalModel::Dbscan(_) => "DBSCAN",
        }
    }

    pub fn scores(&self, points: &Points) -> Result<Vec<f64>> {
        match self {
            ClassicalModel::IsolationForest(m) => iforest_scores(m, points),
            ClassicalModel::Lof(m) => lof_scores(m, points),
            ClassicalModel::Dbscan(m) => dbscan_scores(m, points),
        }
    }

    pub fn predict(&self, points: &Points) -> Result<Vec<Label>> {
        match self {
            ClassicalModel::IsolationForest(m) => iforest_predict(m, points),
            ClassicalModel::Lof(m) => lof_predict(m, points),
            ClassicalModel::Dbscan(m) => dbscan_predict(m, points),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ClassicalModel> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}
