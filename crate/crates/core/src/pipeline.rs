//! End-to-end experiment: ingest, features, labels, split, resampling,
//! model fitting, threshold selection and evaluation on the held-out rows.
//!
//! Held-out test rows are tracked by id. Every stage that learns from data
//! checks its input against those ids and fails with [`Error::Leakage`] if
//! any test row reached it.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{ae_init, ae_score, ae_train, AutoencoderModel, TrainConfig};
use crate::config::{ModelKind, ResampleMode, RunConfig, SplitUnit};
use crate::detectors::{labels_from_scores, ClassicalModel, Points};
use crate::error::{Error, Result, Stage, StageExt};
use crate::features::{engineer_all, write_rows, FeatureRow, Label, Scaler};
use crate::ingest::{deduplicate, group_tracks, parse_csv, DetectionRecord, DropCounts, StationMap};
use crate::labelling::{label_all, write_label_dump, Labelled};
use crate::metrics::{
    confusion, derive_seed, roc_auc, roc_curve, write_summary_csv, MetricIntervals, Metrics, ModelReport,
};
use crate::resampling::{plan, resample, ResamplePlan};
use crate::thresholding::{build_table, default_percentiles, select_threshold, PercentileTable, ThresholdResult};
use crate::tuning::{fit_classical, ParamSet};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub records: usize,
    pub dropped: DropCounts,
    pub duplicates: usize,
}

/// Deduplicates, groups and labels raw detections.
pub fn prepare(records: Vec<DetectionRecord>, stations: &StationMap) -> Result<(Labelled, usize)> {
    let (records, duplicates) = deduplicate(records);
    if records.is_empty() {
        return Err(Error::EmptyInput("detections").at(Stage::Ingest));
    }
    let tracks = group_tracks(records);
    let labelled = label_all(&tracks, stations).stage(Stage::Label)?;
    Ok((labelled, duplicates))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSplit {
    pub normal_test: Vec<FeatureRow>,
    /// Normal rows available for resampling and training.
    pub normal_pool: Vec<FeatureRow>,
    pub anomaly_test: Vec<FeatureRow>,
    /// Anomalous rows used for threshold selection and unsupervised fitting.
    pub anomaly_val: Vec<FeatureRow>,
}

impl DatasetSplit {
    pub fn test_rows(&self) -> Vec<FeatureRow> {
        self.normal_test.iter().chain(&self.anomaly_test).cloned().collect()
    }

    pub const PARTS: [&'static str; 4] = ["normal_test", "normal_pool", "anomaly_test", "anomaly_val"];

    fn parts(&self) -> [&Vec<FeatureRow>; 4] {
        [
            &self.normal_test,
            &self.normal_pool,
            &self.anomaly_test,
            &self.anomaly_val,
        ]
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, rows) in Self::PARTS.iter().zip(self.parts()) {
            write_rows(rows, BufWriter::new(File::create(dir.join(format!("{name}.csv")))?))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<DatasetSplit> {
        let read = |name: &str| -> Result<Vec<FeatureRow>> {
            let p = dir.join(format!("{name}.csv"));
            if !p.exists() {
                return Err(Error::MissingFile(p));
            }
            crate::features::read_rows(File::open(p)?)
        };
        Ok(DatasetSplit {
            normal_test: read("normal_test")?,
            normal_pool: read("normal_pool")?,
            anomaly_test: read("anomaly_test")?,
            anomaly_val: read("anomaly_val")?,
        })
    }
}

/// Moves `round(fraction * n)` rows into the first partition; with
/// [`SplitUnit::Fish`] whole fish are moved until the target is reached.
/// Both partitions are returned in id order.
fn partition(
    rows: Vec<FeatureRow>,
    fraction: f64,
    unit: SplitUnit,
    rng: &mut ChaCha8Rng,
) -> (Vec<FeatureRow>, Vec<FeatureRow>) {
    let target = (fraction * rows.len() as f64).round() as usize;
    let mut chosen = vec![false; rows.len()];
    match unit {
        SplitUnit::Detection => {
            let mut idx: Vec<usize> = (0..rows.len()).collect();
            idx.shuffle(rng);
            for &i in &idx[..target] {
                chosen[i] = true;
            }
        }
        SplitUnit::Fish => {
            let mut by_fish: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, r) in rows.iter().enumerate() {
                by_fish.entry(&r.fish_id).or_default().push(i);
            }
            let mut fish: Vec<Vec<usize>> = by_fish.into_values().collect();
            fish.shuffle(rng);
            let mut taken = 0;
            for members in fish {
                if taken >= target {
                    break;
                }
                taken += members.len();
                for i in members {
                    chosen[i] = true;
                }
            }
        }
    }
    let (mut a, mut b): (Vec<_>, Vec<_>) = rows.into_iter().zip(chosen).partition(|(_, c)| *c);
    a.sort_by_key(|(r, _)| r.id);
    b.sort_by_key(|(r, _)| r.id);
    (
        a.into_iter().map(|(r, _)| r).collect(),
        b.into_iter().map(|(r, _)| r).collect(),
    )
}

/// Stratified split of labelled rows into test and training partitions.
pub fn split(rows: &[FeatureRow], cfg: &RunConfig, seed: u64) -> Result<DatasetSplit> {
    let normals: Vec<FeatureRow> = rows.iter().filter(|r| r.is_normal()).cloned().collect();
    let anomalies: Vec<FeatureRow> = rows.iter().filter(|r| r.is_anomaly()).cloned().collect();
    if normals.is_empty() || anomalies.is_empty() {
        return Err(Error::SingleClass("split input"));
    }
    if normals.len() + anomalies.len() != rows.len() {
        return Err(Error::InvalidData("split input contains unlabelled rows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (normal_test, normal_pool) = partition(normals, cfg.normal_test_fraction, cfg.split_unit, &mut rng);
    let (anomaly_test, anomaly_val) = partition(anomalies, cfg.anomaly_test_fraction, cfg.split_unit, &mut rng);
    Ok(DatasetSplit {
        normal_test,
        normal_pool,
        anomaly_test,
        anomaly_val,
    })
}

/// Ids of held-out test rows, checked before every learning step.
#[derive(Debug, Clone, Default)]
pub struct LeakageGuard {
    test_ids: HashSet<u64>,
}

impl LeakageGuard {
    pub fn new(split: &DatasetSplit) -> LeakageGuard {
        LeakageGuard {
            test_ids: split
                .normal_test
                .iter()
                .chain(&split.anomaly_test)
                .map(|r| r.id)
                .collect(),
        }
    }

    pub fn check<'a, I>(&self, stage: Stage, rows: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a FeatureRow>,
    {
        let mut count = 0;
        let mut first_id = None;
        for r in rows {
            if self.test_ids.contains(&r.id) {
                count += 1;
                first_id.get_or_insert(r.id);
            }
        }
        match first_id {
            None => Ok(()),
            Some(first_id) => Err(Error::Leakage { stage, count, first_id }.at(stage)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderArtifacts {
    pub model: AutoencoderModel,
    pub table: PercentileTable,
    pub threshold: ThresholdResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub scaler: Scaler,
    pub resample_plan: Option<ResamplePlan>,
    pub autoencoder: Option<AutoencoderArtifacts>,
    pub classical: Vec<ClassicalModel>,
    /// Training wall-clock seconds per model name.
    pub timings: BTreeMap<String, f64>,
    pub training_rows: usize,
}

fn scaled_points(scaler: &Scaler, rows: &[FeatureRow]) -> Points {
    Points::from_rows(&scaler.apply(rows))
}

fn labels_of(rows: &[FeatureRow]) -> Result<Vec<Label>> {
    rows.iter()
        .map(|r| {
            r.label
                .ok_or_else(|| Error::InvalidData(format!("row {} has no label", r.id)))
        })
        .collect()
}

pub fn classical_params(cfg: &RunConfig, kind: ModelKind) -> ParamSet {
    let entries: Vec<(&str, f64)> = match kind {
        ModelKind::IsolationForest => vec![
            ("n_estimators", cfg.if_n_estimators as f64),
            ("contamination", cfg.if_contamination),
            ("subsample", cfg.if_subsample as f64),
        ],
        ModelKind::Lof => vec![
            ("n_neighbors", cfg.lof_neighbors as f64),
            ("contamination", cfg.lof_contamination),
        ],
        ModelKind::Dbscan => vec![("eps", cfg.dbscan_eps), ("min_samples", cfg.dbscan_min_samples as f64)],
        ModelKind::Autoencoder => vec![
            ("learning_rate", cfg.ae_learning_rate),
            ("units", cfg.ae_units as f64),
            ("bottleneck", cfg.ae_bottleneck as f64),
            ("batch_size", cfg.ae_batch_size as f64),
            ("epochs", cfg.ae_epochs as f64),
        ],
    };
    entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn describe(params: &ParamSet) -> String {
    params
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Resampled normal rows from the training pool.
pub fn resample_pool(cfg: &RunConfig, pool: &[FeatureRow]) -> Result<(Vec<FeatureRow>, Option<ResamplePlan>)> {
    let plan = match cfg.resample {
        ResampleMode::None => return Ok((pool.to_vec(), None)),
        ResampleMode::Auto => plan(pool, cfg.max_points)?,
        ResampleMode::Fixed(dt) => ResamplePlan::fixed(dt)?,
    };
    Ok((resample(pool, &plan)?, Some(plan)))
}

/// Partitions for the autoencoder built from the training pool: resampled
/// normals split into training and validation rows.
pub struct TrainingSets {
    pub ae_train: Vec<FeatureRow>,
    pub ae_val: Vec<FeatureRow>,
    pub plan: Option<ResamplePlan>,
}

pub fn training_sets(cfg: &RunConfig, split: &DatasetSplit, guard: &LeakageGuard, seed: u64) -> Result<TrainingSets> {
    guard.check(Stage::Resample, &split.normal_pool)?;
    let (resampled, plan) = resample_pool(cfg, &split.normal_pool).stage(Stage::Resample)?;
    if let Some(p) = &plan {
        log::info!(
            "resampled {} normal rows to {} at {} s",
            split.normal_pool.len(),
            resampled.len(),
            p.delta_t
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let (ae_val, ae_train) = partition(resampled, cfg.ae_validation_fraction, SplitUnit::Detection, &mut rng);
    if ae_train.is_empty() || ae_val.is_empty() {
        return Err(Error::EmptyInput("autoencoder training or validation rows").at(Stage::Split));
    }
    Ok(TrainingSets { ae_train, ae_val, plan })
}

pub fn train_models(cfg: &RunConfig, split: &DatasetSplit, seed: u64) -> Result<TrainedModels> {
    let guard = LeakageGuard::new(split);
    guard.check(Stage::Threshold, &split.anomaly_val)?;
    let sets = training_sets(cfg, split, &guard, seed)?;

    guard.check(Stage::Fit, &sets.ae_train)?;
    let scaler = Scaler::fit_rows(&sets.ae_train).stage(Stage::Fit)?;
    let mut timings = BTreeMap::new();

    let autoencoder = if cfg.has_model(ModelKind::Autoencoder) {
        let started = Instant::now();
        let params = classical_params(cfg, ModelKind::Autoencoder);
        let mut model =
            ae_init(scaler.dim(), cfg.ae_units, cfg.ae_bottleneck, derive_seed(seed, 2)).stage(Stage::Fit)?;
        let train_cfg = TrainConfig {
            learning_rate: cfg.ae_learning_rate,
            batch_size: cfg.ae_batch_size,
            epochs: cfg.ae_epochs,
            seed: derive_seed(seed, 3),
            ..TrainConfig::default()
        };
        let train_pts = scaled_points(&scaler, &sets.ae_train);
        let val_pts = scaled_points(&scaler, &sets.ae_val);
        ae_train(&mut model, &train_pts, Some(&val_pts), &train_cfg).stage(Stage::Fit)?;
        model.scaler = Some(scaler.clone());
        timings.insert(
            ModelKind::Autoencoder.display_name().to_string(),
            started.elapsed().as_secs_f64(),
        );

        let threshold_rows: Vec<FeatureRow> = sets.ae_val.iter().chain(&split.anomaly_val).cloned().collect();
        guard.check(Stage::Threshold, &threshold_rows)?;
        let errors = ae_score(&model, &scaled_points(&scaler, &threshold_rows)).stage(Stage::Threshold)?;
        let truth = labels_of(&threshold_rows).stage(Stage::Threshold)?;
        let table = build_table(&errors, &truth, &default_percentiles()).stage(Stage::Threshold)?;
        let threshold = select_threshold(&table).stage(Stage::Threshold)?;
        log::info!(
            "autoencoder threshold {:.6} at percentile {} ({})",
            threshold.threshold,
            threshold.percentile,
            describe(&params)
        );
        Some(AutoencoderArtifacts {
            model,
            table,
            threshold,
        })
    } else {
        None
    };

    let classical_rows: Vec<FeatureRow> = sets
        .ae_train
        .iter()
        .chain(&sets.ae_val)
        .chain(&split.anomaly_val)
        .cloned()
        .collect();
    let mut classical = Vec::new();
    let kinds = [ModelKind::IsolationForest, ModelKind::Lof, ModelKind::Dbscan];
    if kinds.iter().any(|&k| cfg.has_model(k)) {
        guard.check(Stage::Fit, &classical_rows)?;
        let pts = scaled_points(&scaler, &classical_rows);
        for kind in kinds.into_iter().filter(|&k| cfg.has_model(k)) {
            let started = Instant::now();
            let model =
                fit_classical(kind, &classical_params(cfg, kind), &pts, derive_seed(seed, 4)).stage(Stage::Fit)?;
            timings.insert(kind.display_name().to_string(), started.elapsed().as_secs_f64());
            log::info!("fitted {} on {} rows", kind.display_name(), pts.len());
            classical.push(model);
        }
    }
    Ok(TrainedModels {
        scaler,
        resample_plan: sets.plan,
        autoencoder,
        classical,
        timings,
        training_rows: sets.ae_train.len(),
    })
}

/// Predictions and scores of each trained model on the test rows.
pub struct Evaluation {
    pub reports: Vec<ModelReport>,
    pub scores: BTreeMap<String, Vec<f64>>,
    pub truth: Vec<Label>,
}

pub fn evaluate_models(cfg: &RunConfig, trained: &TrainedModels, split: &DatasetSplit) -> Result<Evaluation> {
    let test = split.test_rows();
    let truth = labels_of(&test).stage(Stage::Evaluate)?;
    let pts = scaled_points(&trained.scaler, &test);
    let interval = trained.resample_plan.as_ref().map(|p| p.delta_t);
    let mut reports = Vec::new();
    let mut all_scores = BTreeMap::new();
    let mut push = |name: &str, scores: Vec<f64>, predicted: Vec<Label>, params: String| -> Result<()> {
        let c = confusion(&predicted, &truth)?;
        let auc = roc_auc(&scores, &truth).ok();
        let mut r = ModelReport::new(name, interval, c, auc);
        r.parameters = params;
        if cfg.record_runtime {
            r.runtime_s = trained.timings.get(name).copied();
        }
        reports.push(r);
        all_scores.insert(name.to_string(), scores);
        Ok(())
    };
    if let Some(ae) = &trained.autoencoder {
        let scores = ae_score(&ae.model, &pts).stage(Stage::Evaluate)?;
        let predicted = labels_from_scores(&scores, ae.threshold.threshold);
        let mut params = classical_params(cfg, ModelKind::Autoencoder);
        params.insert("percentile".into(), f64::from(ae.threshold.percentile));
        push("NN-AE", scores, predicted, describe(&params)).stage(Stage::Evaluate)?;
    }
    for model in &trained.classical {
        let scores = model.scores(&pts).stage(Stage::Evaluate)?;
        let predicted = model.predict(&pts).stage(Stage::Evaluate)?;
        let kind: ModelKind = model.name().parse()?;
        push(model.name(), scores, predicted, describe(&classical_params(cfg, kind))).stage(Stage::Evaluate)?;
    }
    Ok(Evaluation {
        reports,
        scores: all_scores,
        truth,
    })
}

/// Split, train and evaluate once.
pub fn run_once(cfg: &RunConfig, rows: &[FeatureRow], seed: u64) -> Result<(DatasetSplit, TrainedModels, Evaluation)> {
    let split = split(rows, cfg, seed).stage(Stage::Split)?;
    let trained = train_models(cfg, &split, seed)?;
    let eval = evaluate_models(cfg, &trained, &split)?;
    Ok((split, trained, eval))
}

/// Per-model intervals from `repeats` reshuffled reruns.
pub fn reshuffled_intervals(
    cfg: &RunConfig,
    rows: &[FeatureRow],
    repeats: usize,
) -> Result<BTreeMap<String, MetricIntervals>> {
    let mut samples: BTreeMap<String, Vec<Metrics>> = BTreeMap::new();
    for r in 0..repeats as u64 {
        let (_, _, eval) = run_once(cfg, rows, derive_seed(cfg.seed, 100 + r))?;
        for rep in eval.reports {
            samples.entry(rep.model).or_default().push(rep.metrics);
        }
    }
    Ok(samples
        .into_iter()
        .map(|(k, v)| (k, MetricIntervals::from_samples(&v)))
        .collect())
}

#[derive(Debug)]
pub struct RunOutcome {
    pub reports: Vec<ModelReport>,
    pub out_dir: PathBuf,
    pub ingest: IngestSummary,
    pub labelled: Labelled,
    pub split: DatasetSplit,
    pub trained: TrainedModels,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    std::io::Write::write_all(&mut f, b"\n")?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

impl TrainedModels {
    pub fn save(&self, dir: &Path) -> Result<()> {
        let models = dir.join("models");
        fs::create_dir_all(&models)?;
        write_json(&dir.join("scaler.json"), &self.scaler)?;
        if let Some(p) = &self.resample_plan {
            write_json(&dir.join("resample_plan.json"), p)?;
        }
        if let Some(ae) = &self.autoencoder {
            ae.model.save(&models.join("nn-ae.json"))?;
            ae.model.losses.write_csv(File::create(dir.join("loss_curve.csv"))?)?;
            ae.table.write_csv(File::create(dir.join("percentile_table.csv"))?)?;
            write_json(&dir.join("threshold.json"), &ae.threshold)?;
        }
        for m in &self.classical {
            let kind: ModelKind = m.name().parse()?;
            m.save(&models.join(format!("{}.json", kind.key())))?;
        }
        write_json(&dir.join("timings.json"), &self.timings)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<TrainedModels> {
        let models = dir.join("models");
        let scaler: Scaler = read_json(&dir.join("scaler.json"))?;
        let plan_path = dir.join("resample_plan.json");
        let resample_plan = if plan_path.exists() {
            Some(read_json(&plan_path)?)
        } else {
            None
        };
        let ae_path = models.join("nn-ae.json");
        let autoencoder = if ae_path.exists() {
            let table_path = dir.join("percentile_table.csv");
            let table = if table_path.exists() {
                PercentileTable::read_csv(File::open(table_path)?)?
            } else {
                PercentileTable::default()
            };
            Some(AutoencoderArtifacts {
                model: AutoencoderModel::load(&ae_path)?,
                table,
                threshold: read_json(&dir.join("threshold.json"))?,
            })
        } else {
            None
        };
        let mut classical = Vec::new();
        for kind in [ModelKind::IsolationForest, ModelKind::Lof, ModelKind::Dbscan] {
            let p = models.join(format!("{}.json", kind.key()));
            if p.exists() {
                classical.push(ClassicalModel::load(&p)?);
            }
        }
        let timings_path = dir.join("timings.json");
        let timings = if timings_path.exists() {
            read_json(&timings_path)?
        } else {
            BTreeMap::new()
        };
        Ok(TrainedModels {
            scaler,
            resample_plan,
            autoencoder,
            classical,
            timings,
            training_rows: 0,
        })
    }
}

pub fn write_reports(dir: &Path, eval: &Evaluation) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("report.json"), &eval.reports)?;
    write_summary_csv(&eval.reports, File::create(dir.join("summary.csv"))?)?;
    for (name, scores) in &eval.scores {
        let kind: ModelKind = name.parse()?;
        let Ok(curve) = roc_curve(scores, &eval.truth) else {
            continue;
        };
        let mut w = csv::Writer::from_path(dir.join(format!("roc_{}.csv", kind.key())))?;
        w.write_record(["threshold", "false_anomaly_rate", "true_anomaly_rate"])?;
        for p in curve {
            w.write_record([
                p.threshold.to_string(),
                p.false_anomaly_rate.to_string(),
                p.true_anomaly_rate.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Loads the station map and detections named in the config.
pub fn load_inputs(cfg: &RunConfig) -> Result<(StationMap, Vec<DetectionRecord>, DropCounts)> {
    let missing = |what: &str| Error::InvalidConfig(format!("config does not name the {what} file"));
    let stations_path = cfg.stations.as_ref().ok_or_else(|| missing("station map"))?;
    let input_path = cfg.input.as_ref().ok_or_else(|| missing("detection input"))?;
    let stations = StationMap::load(stations_path).stage(Stage::Ingest)?;
    let parsed = parse_csv(input_path, &stations).stage(Stage::Ingest)?;
    Ok((stations, parsed.records, parsed.dropped))
}

/// Runs the whole workflow and writes every stage's artifacts under the
/// configured output directory.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;

    let (stations, records, dropped) = load_inputs(cfg)?;
    let n_records = records.len();
    let (labelled, duplicates) = prepare(records, &stations)?;
    let ingest = IngestSummary {
        records: n_records - duplicates,
        dropped,
        duplicates,
    };
    write_json(&out.join("ingest_summary.json"), &ingest).stage(Stage::Report)?;
    write_rows(&labelled.rows, BufWriter::new(File::create(out.join("features.csv"))?)).stage(Stage::Report)?;
    write_label_dump(&labelled, BufWriter::new(File::create(out.join("labels.csv"))?)).stage(Stage::Report)?;
    write_json(&out.join("label_report.json"), &labelled.report).stage(Stage::Report)?;

    let (split, trained, mut eval) = run_once(cfg, &labelled.rows, cfg.seed)?;
    split.save(&out.join("split")).stage(Stage::Report)?;
    trained.save(&out).stage(Stage::Report)?;

    if cfg.ci_repeats >= 2 {
        let intervals = reshuffled_intervals(cfg, &labelled.rows, cfg.ci_repeats)?;
        for r in &mut eval.reports {
            r.ci = intervals.get(&r.model).cloned();
        }
    }
    write_reports(&out, &eval).stage(Stage::Report)?;
    Ok(RunOutcome {
        reports: eval.reports,
        out_dir: out,
        ingest,
        labelled,
        split,
        trained,
    })
}

/// Rebuilds labelled feature rows from detections without writing anything.
pub fn features_only(stations: &StationMap, records: Vec<DetectionRecord>) -> Result<Vec<FeatureRow>> {
    let (records, _) = deduplicate(records);
    engineer_all(&group_tracks(records), stations).stage(Stage::Features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FEATURE_DIM;

    fn rows(normals: usize, anomalies: usize) -> Vec<FeatureRow> {
        (0..normals + anomalies)
            .map(|i| FeatureRow {
                id: i as u64,
                fish_id: format!("F{}", i % 7),
                timestamp: 1_500_000_000 + i as i64 * 60,
                values: [i as f64; FEATURE_DIM],
                label: Some(if i < normals { Label::Normal } else { Label::Anomaly }),
            })
            .collect()
    }

    #[test]
    fn split_sizes_follow_fractions() {
        let s = split(&rows(1000, 100), &RunConfig::default(), 1).unwrap();
        assert_eq!(s.normal_test.len(), 100);
        assert_eq!(s.normal_pool.len(), 900);
        assert_eq!(s.anomaly_test.len(), 50);
        assert_eq!(s.anomaly_val.len(), 50);
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let input = rows(300, 40);
        let cfg = RunConfig::default();
        let a = split(&input, &cfg, 5).unwrap();
        assert_eq!(a, split(&input, &cfg, 5).unwrap());
        assert_ne!(a, split(&input, &cfg, 6).unwrap());
        let mut ids: Vec<u64> = a.parts().iter().flat_map(|p| p.iter().map(|r| r.id)).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..340).collect::<Vec<u64>>());
    }

    #[test]
    fn fish_split_keeps_fish_together() {
        let cfg = RunConfig {
            split_unit: SplitUnit::Fish,
            ..Default::default()
        };
        let s = split(&rows(700, 70), &cfg, 2).unwrap();
        let test_fish: HashSet<&str> = s.normal_test.iter().map(|r| r.fish_id.as_str()).collect();
        assert!(s.normal_pool.iter().all(|r| !test_fish.contains(r.fish_id.as_str())));
        assert!(!s.normal_test.is_empty());
    }

    #[test]
    fn split_needs_both_classes() {
        assert!(matches!(
            split(&rows(10, 0), &RunConfig::default(), 0),
            Err(Error::SingleClass(_))
        ));
    }

    #[test]
    fn guard_reports_leaked_rows() {
        let s = split(&rows(100, 20), &RunConfig::default(), 3).unwrap();
        let guard = LeakageGuard::new(&s);
        assert!(guard.check(Stage::Fit, &s.normal_pool).is_ok());
        let mut leaked = s.normal_pool.clone();
        leaked.push(s.anomaly_test[0].clone());
        let err = guard.check(Stage::Fit, &leaked).unwrap_err();
        assert!(matches!(err.root(), Error::Leakage { count: 1, .. }));
        assert_eq!(err.exit_code(), 3);
    }
}
