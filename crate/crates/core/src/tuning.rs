//! Exhaustive grid search over model hyperparameters.
//!
//! Candidate lists are sorted and deduplicated, and configurations are
//! enumerated in lexicographic order of parameter name then value. That
//! canonical order breaks score ties, so the result does not depend on how
//! the lists were written. Classical detectors are ranked by validation F1;
//! the autoencoder is ranked by the (recall, precision, specificity) of its
//! selected percentile threshold.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{ae_init, ae_score, ae_train, TrainConfig};
use crate::config::ModelKind;
use crate::detectors::{dbscan_fit, iforest_fit, lof_fit, ClassicalModel, IsoForestParams, Points};
use crate::error::{Error, Result};
use crate::features::Label;
use crate::metrics::{compute_metrics, confusion, Metrics};
use crate::thresholding::{build_table, default_percentiles, select_threshold};

pub type ParamSet = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub params: BTreeMap<String, Vec<f64>>,
}

impl Grid {
    pub fn new<I, S>(entries: I) -> Result<Grid>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut params = BTreeMap::new();
        for (name, mut values) in entries {
            let name = name.into();
            if values.is_empty() {
                return Err(Error::InvalidConfig(format!("grid parameter {name} has no candidates")));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "grid parameter {name} has a non-finite candidate"
                )));
            }
            values.sort_by(f64::total_cmp);
            values.dedup();
            params.insert(name, values);
        }
        if params.is_empty() {
            return Err(Error::InvalidConfig("empty grid".into()));
        }
        Ok(Grid { params })
    }

    /// The hyperparameter lists searched for each model by default.
    pub fn default_for(kind: ModelKind) -> Grid {
        let g = match kind {
            ModelKind::IsolationForest => Grid::new([
                ("contamination", vec![0.001, 0.02, 0.05, 0.3]),
                ("n_estimators", vec![100.0, 150.0, 200.0]),
            ]),
            ModelKind::Lof => Grid::new([
                ("n_neighbors", vec![5.0, 10.0, 20.0]),
                ("contamination", vec![0.01, 0.08, 0.1, 0.2]),
            ]),
            ModelKind::Dbscan => Grid::new([
                ("eps", vec![0.5, 1.5, 2.0, 3.5, 5.0]),
                ("min_samples", vec![2.0, 4.0, 10.0]),
            ]),
            ModelKind::Autoencoder => Grid::new([
                ("learning_rate", vec![0.001, 0.01, 0.1]),
                ("units", vec![4.0, 8.0, 16.0, 32.0, 64.0, 128.0]),
                ("bottleneck", vec![2.0, 4.0, 8.0]),
                ("batch_size", vec![128.0, 256.0, 512.0]),
                ("epochs", vec![20.0, 50.0]),
            ]),
        };
        g.expect("default grids are valid")
    }

    pub fn size(&self) -> usize {
        self.params.values().map(Vec::len).product()
    }

    /// All configurations in canonical order.
    pub fn configurations(&self) -> Vec<ParamSet> {
        let mut out = vec![ParamSet::new()];
        for (name, values) in &self.params {
            out = out
                .into_iter()
                .flat_map(|base| {
                    values.iter().map(move |&v| {
                        let mut p = base.clone();
                        p.insert(name.clone(), v);
                        p
                    })
                })
                .collect();
        }
        out
    }
}

fn param(p: &ParamSet, name: &str) -> Result<f64> {
    p.get(name)
        .copied()
        .ok_or_else(|| Error::InvalidConfig(format!("missing hyperparameter {name}")))
}

fn count_param(p: &ParamSet, name: &str) -> Result<usize> {
    let v = param(p, name)?;
    if v < 1.0 || v.fract() != 0.0 {
        return Err(Error::InvalidConfig(format!(
            "{name} must be a positive integer, got {v}"
        )));
    }
    Ok(v as usize)
}

pub fn fit_classical(kind: ModelKind, p: &ParamSet, train: &Points, seed: u64) -> Result<ClassicalModel> {
    Ok(match kind {
        ModelKind::IsolationForest => ClassicalModel::IsolationForest(iforest_fit(
            train,
            &IsoForestParams {
                n_estimators: count_param(p, "n_estimators")?,
                contamination: param(p, "contamination")?,
                subsample: p.get("subsample").map_or(256, |&v| v as usize),
                seed,
            },
        )?),
        ModelKind::Lof => ClassicalModel::Lof(lof_fit(
            train.clone(),
            count_param(p, "n_neighbors")?,
            param(p, "contamination")?,
        )?),
        ModelKind::Dbscan => {
            ClassicalModel::Dbscan(dbscan_fit(train, param(p, "eps")?, count_param(p, "min_samples")?)?)
        }
        ModelKind::Autoencoder => {
            return Err(Error::InvalidConfig(
                "the autoencoder is not a classical detector".into(),
            ));
        }
    })
}

pub fn train_config(p: &ParamSet, seed: u64) -> Result<TrainConfig> {
    Ok(TrainConfig {
        learning_rate: param(p, "learning_rate")?,
        batch_size: count_param(p, "batch_size")?,
        epochs: count_param(p, "epochs")?,
        seed,
        ..TrainConfig::default()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub params: ParamSet,
    pub metrics: Metrics,
    /// Selected percentile, for the autoencoder only.
    pub percentile: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub model: ModelKind,
    pub best: ParamSet,
    pub best_index: usize,
    pub rows: Vec<ScoreRow>,
}

fn cmp_opt(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => Ordering::Greater,
        (None, Some(_)) => Ordering::Less,
        (None, None) => Ordering::Equal,
    }
}

fn rank(kind: ModelKind, a: &Metrics, b: &Metrics) -> Ordering {
    match kind {
        ModelKind::Autoencoder => cmp_opt(a.recall, b.recall)
            .then(cmp_opt(a.precision, b.precision))
            .then(cmp_opt(a.specificity, b.specificity)),
        _ => cmp_opt(a.f1, b.f1),
    }
}

fn evaluate(
    kind: ModelKind,
    p: &ParamSet,
    train: &Points,
    val: &Points,
    truth: &[Label],
    seed: u64,
) -> Result<ScoreRow> {
    if kind == ModelKind::Autoencoder {
        let mut model = ae_init(
            train.dim(),
            count_param(p, "units")?,
            count_param(p, "bottleneck")?,
            seed,
        )?;
        ae_train(&mut model, train, None, &train_config(p, seed)?)?;
        let table = build_table(&ae_score(&model, val)?, truth, &default_percentiles())?;
        let chosen = select_threshold(&table)?;
        return Ok(ScoreRow {
            params: p.clone(),
            metrics: chosen.metrics,
            percentile: Some(chosen.percentile),
        });
    }
    let model = fit_classical(kind, p, train, seed)?;
    let c = confusion(&model.predict(val)?, truth)?;
    Ok(ScoreRow {
        params: p.clone(),
        metrics: compute_metrics(&c),
        percentile: None,
    })
}

pub fn grid_search(
    kind: ModelKind,
    grid: &Grid,
    train: &Points,
    val: &Points,
    val_truth: &[Label],
    seed: u64,
) -> Result<TuningResult> {
    if val.len() != val_truth.len() {
        return Err(Error::LengthMismatch {
            left: val.len(),
            right: val_truth.len(),
        });
    }
    if !val_truth.contains(&Label::Anomaly) || !val_truth.contains(&Label::Normal) {
        return Err(Error::SingleClass("tuning validation set"));
    }
    let configs = grid.configurations();
    let rows = configs
        .par_iter()
        .map(|p| evaluate(kind, p, train, val, val_truth, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut best_index = 0;
    for (i, r) in rows.iter().enumerate().skip(1) {
        if rank(kind, &r.metrics, &rows[best_index].metrics) == Ordering::Greater {
            best_index = i;
        }
    }
    Ok(TuningResult {
        model: kind,
        best: rows[best_index].params.clone(),
        best_index,
        rows,
    })
}

impl TuningResult {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let names: Vec<&String> = self.rows.first().map(|r| r.params.keys().collect()).unwrap_or_default();
        let mut header: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        header.extend(
            [
                "accuracy",
                "precision",
                "recall",
                "specificity",
                "f1",
                "percentile",
                "best",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        w.write_record(&header)?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (i, r) in self.rows.iter().enumerate() {
            let mut rec: Vec<String> = r.params.values().map(f64::to_string).collect();
            let m = &r.metrics;
            rec.extend([
                cell(m.accuracy),
                cell(m.precision),
                cell(m.recall),
                cell(m.specificity),
                cell(m.f1),
                r.percentile.map(|p| p.to_string()).unwrap_or_default(),
                (i == self.best_index).to_string(),
            ]);
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Anomaly as A, Normal as N};

    #[test]
    fn grid_sizes_match_product() {
        assert_eq!(Grid::default_for(ModelKind::IsolationForest).configurations().len(), 12);
        assert_eq!(Grid::default_for(ModelKind::Lof).size(), 12);
        assert_eq!(Grid::default_for(ModelKind::Dbscan).size(), 15);
        let ae = Grid::default_for(ModelKind::Autoencoder);
        assert_eq!(ae.configurations().len(), ae.size());
        assert_eq!(ae.size(), 3 * 6 * 3 * 3 * 2);
    }

    #[test]
    fn empty_lists_are_rejected() {
        assert!(Grid::new([("eps", vec![])]).is_err());
        assert!(Grid::new(Vec::<(String, Vec<f64>)>::new()).is_err());
    }

    #[test]
    fn canonical_order_ignores_input_order() {
        let a = Grid::new([("eps", vec![2.0, 0.5]), ("min_samples", vec![4.0, 2.0])]).unwrap();
        let b = Grid::new([("min_samples", vec![2.0, 4.0, 2.0]), ("eps", vec![0.5, 2.0])]).unwrap();
        assert_eq!(a.configurations(), b.configurations());
        assert_eq!(a.configurations()[0]["eps"], 0.5);
        assert_eq!(a.configurations()[1]["min_samples"], 4.0);
    }

    fn blob_data() -> (Points, Points, Vec<Label>) {
        let mut train = Vec::new();
        for c in [0.0, 1.0] {
            for i in 0..40 {
                train.push(vec![c + (i % 8) as f64 * 0.01, c + (i / 8) as f64 * 0.01]);
            }
        }
        let val = vec![vec![0.02, 0.02], vec![1.03, 1.01], vec![0.5, 0.5], vec![3.0, -2.0]];
        (
            Points::from_vecs(&train).unwrap(),
            Points::from_vecs(&val).unwrap(),
            vec![N, N, A, A],
        )
    }

    #[test]
    fn planted_eps_wins() {
        let (train, val, truth) = blob_data();
        // only eps = 0.05 keeps both blobs while leaving the midpoint outside
        let grid = Grid::new([("eps", vec![0.001, 0.05, 1.0]), ("min_samples", vec![3.0])]).unwrap();
        let r = grid_search(ModelKind::Dbscan, &grid, &train, &val, &truth, 0).unwrap();
        assert_eq!(r.best["eps"], 0.05);
        assert_eq!(r.rows.len(), 3);
        assert_eq!(r.rows[r.best_index].metrics.f1, Some(1.0));
    }

    #[test]
    fn single_candidate_grid() {
        let (train, val, truth) = blob_data();
        let grid = Grid::new([("n_estimators", vec![10.0]), ("contamination", vec![0.05])]).unwrap();
        let r = grid_search(ModelKind::IsolationForest, &grid, &train, &val, &truth, 1).unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.best_index, 0);
    }

    #[test]
    fn single_class_validation_is_rejected() {
        let (train, val, _) = blob_data();
        let grid = Grid::new([("eps", vec![0.1]), ("min_samples", vec![2.0])]).unwrap();
        assert!(grid_search(ModelKind::Dbscan, &grid, &train, &val, &[N; 4], 0).is_err());
    }

    #[test]
    fn autoencoder_search_reports_percentiles() {
        let (train, val, truth) = blob_data();
        let grid = Grid::new([
            ("learning_rate", vec![0.01]),
            ("units", vec![4.0, 8.0]),
            ("bottleneck", vec![2.0]),
            ("batch_size", vec![16.0]),
            ("epochs", vec![3.0]),
        ])
        .unwrap();
        let r = grid_search(ModelKind::Autoencoder, &grid, &train, &val, &truth, 0).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r.rows.iter().all(|row| row.percentile.is_some()));
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
