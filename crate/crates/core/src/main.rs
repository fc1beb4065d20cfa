use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use telemetry_anomaly::config::{ModelKind, ResampleMode, RunConfig};
use telemetry_anomaly::detectors::Points;
use telemetry_anomaly::features::{read_rows, write_rows, FeatureRow, Label, Scaler};
use telemetry_anomaly::ingest::{deduplicate, parse_csv, write_csv, StationMap};
use telemetry_anomaly::labelling::write_label_dump;
use telemetry_anomaly::pipeline::{
    evaluate_models, features_only, prepare, resample_pool, run_experiment, split, train_models, training_sets,
    write_reports, DatasetSplit, IngestSummary, LeakageGuard, TrainedModels,
};
use telemetry_anomaly::synthgen::{generate, write_ground_truth, SynthConfig};
use telemetry_anomaly::thresholding::{build_table, default_percentiles, select_threshold, PercentileTable};
use telemetry_anomaly::tuning::{grid_search, Grid};
use telemetry_anomaly::{Error, Result};

#[derive(Parser)]
#[command(
    name = "telemetry-anomaly",
    version,
    about = "Unsupervised anomaly detection for acoustic telemetry detections"
)]
struct Cli {
    /// Run configuration (flat TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Log verbosity; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Inputs {
    /// Detection CSV (fishid, receiver, station, lat, lon, date, time_sa).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Station map CSV (station, lat, lon, order).
    #[arg(long)]
    stations: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and deduplicate detections.
    Ingest(Inputs),
    /// Engineer per-detection features.
    Features(Inputs),
    /// Engineer features and apply the labelling rules.
    Label(Inputs),
    /// Regrid the normal rows of a labelled feature file.
    Resample {
        #[arg(long)]
        features: PathBuf,
        /// none, auto or a number of seconds.
        #[arg(long)]
        interval: Option<ResampleMode>,
        #[arg(long)]
        max_points: Option<usize>,
    },
    /// Split a labelled feature file into test and training partitions.
    Split {
        #[arg(long)]
        features: PathBuf,
    },
    /// Fit the configured models on a saved split.
    Train {
        /// Directory written by `split`; defaults to `<out>/split`.
        #[arg(long)]
        split_dir: Option<PathBuf>,
    },
    /// Grid-search one model's hyperparameters on a saved split.
    Tune {
        #[arg(long)]
        model: ModelKind,
        #[arg(long)]
        split_dir: Option<PathBuf>,
        /// TOML table of parameter name to candidate list; defaults to the
        /// built-in grid for the model.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Select a reconstruction-error threshold.
    Threshold {
        /// CSV with `error` and `label` columns.
        #[arg(long, conflicts_with = "table", required_unless_present = "table")]
        errors: Option<PathBuf>,
        /// Replay a saved percentile table instead.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Evaluate trained models on the held-out rows of a saved split.
    Evaluate {
        #[arg(long)]
        split_dir: Option<PathBuf>,
        /// Directory written by `train`; defaults to `<out>`.
        #[arg(long)]
        models_dir: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with ground truth.
    Synth {
        /// TOML file with generator settings.
        #[arg(long)]
        synth_config: Option<PathBuf>,
        #[arg(long)]
        fish: Option<usize>,
        #[arg(long)]
        days: Option<f64>,
        #[arg(long)]
        single_station_rate: Option<f64>,
        #[arg(long)]
        stationary_rate: Option<f64>,
        #[arg(long)]
        skip_rate: Option<f64>,
    },
    /// Run the whole pipeline.
    Run(Inputs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn apply_inputs(cfg: &mut RunConfig, inputs: &Inputs) {
    if let Some(p) = &inputs.input {
        cfg.input = Some(p.clone());
    }
    if let Some(p) = &inputs.stations {
        cfg.stations = Some(p.clone());
    }
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::InvalidConfig(format!("no {what} given; use the command-line flag or the config file")))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    Ok(())
}

fn read_features(path: &Path) -> Result<Vec<FeatureRow>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_rows(File::open(path)?)
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out)?;
    match &cli.command {
        Command::Ingest(inputs) | Command::Features(inputs) | Command::Label(inputs) => {
            apply_inputs(&mut cfg, inputs);
            let stations = StationMap::load(required(&cfg.stations, "station map")?)?;
            let parsed = parse_csv(required(&cfg.input, "detection input")?, &stations)?;
            match &cli.command {
                Command::Ingest(_) => {
                    let (records, duplicates) = deduplicate(parsed.records);
                    write_csv(&records, BufWriter::new(File::create(out.join("detections.csv"))?))?;
                    let summary = IngestSummary {
                        records: records.len(),
                        dropped: parsed.dropped,
                        duplicates,
                    };
                    write_json(&out.join("ingest_summary.json"), &summary)?;
                    println!("{} detections kept, {} duplicates removed", records.len(), duplicates);
                }
                Command::Features(_) => {
                    let rows = features_only(&stations, parsed.records)?;
                    write_rows(&rows, BufWriter::new(File::create(out.join("features.csv"))?))?;
                    println!("{} feature rows written", rows.len());
                }
                _ => {
                    let (labelled, _) = prepare(parsed.records, &stations)?;
                    write_rows(&labelled.rows, BufWriter::new(File::create(out.join("features.csv"))?))?;
                    write_label_dump(&labelled, BufWriter::new(File::create(out.join("labels.csv"))?))?;
                    write_json(&out.join("label_report.json"), &labelled.report)?;
                    let r = &labelled.report;
                    println!(
                        "{} normal, {} anomalous (single station {}, stationary {}, skipped stations {})",
                        r.normal, r.anomaly, r.single_station, r.stationary, r.skipped_stations
                    );
                }
            }
        }
        Command::Resample {
            features,
            interval,
            max_points,
        } => {
            if let Some(m) = interval {
                cfg.resample = *m;
            }
            if let Some(m) = max_points {
                cfg.max_points = *m;
            }
            let rows = read_features(features)?;
            let normals: Vec<FeatureRow> = rows.into_iter().filter(FeatureRow::is_normal).collect();
            let (resampled, plan) = resample_pool(&cfg, &normals)?;
            write_rows(&resampled, BufWriter::new(File::create(out.join("resampled.csv"))?))?;
            if let Some(p) = &plan {
                write_json(&out.join("resample_plan.json"), p)?;
                println!(
                    "{} normal rows regridded to {} at {} s",
                    normals.len(),
                    resampled.len(),
                    p.delta_t
                );
            }
        }
        Command::Split { features } => {
            let rows = read_features(features)?;
            let s = split(&rows, &cfg, cfg.seed)?;
            s.save(&out.join("split"))?;
            println!(
                "normal test {}, normal pool {}, anomaly test {}, anomaly validation {}",
                s.normal_test.len(),
                s.normal_pool.len(),
                s.anomaly_test.len(),
                s.anomaly_val.len()
            );
        }
        Command::Train { split_dir } => {
            let s = DatasetSplit::load(&split_dir.clone().unwrap_or_else(|| out.join("split")))?;
            let trained = train_models(&cfg, &s, cfg.seed)?;
            trained.save(&out)?;
            if let Some(ae) = &trained.autoencoder {
                println!(
                    "autoencoder threshold {} (percentile {})",
                    ae.threshold.threshold, ae.threshold.percentile
                );
            }
        }
        Command::Tune { model, split_dir, grid } => {
            let s = DatasetSplit::load(&split_dir.clone().unwrap_or_else(|| out.join("split")))?;
            let grid = match grid {
                Some(p) => {
                    let text = fs::read_to_string(p)?;
                    let table: BTreeMap<String, Vec<f64>> =
                        toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                    Grid::new(table)?
                }
                None => Grid::default_for(*model),
            };
            let guard = LeakageGuard::new(&s);
            let sets = training_sets(&cfg, &s, &guard, cfg.seed)?;
            let scaler = Scaler::fit_rows(&sets.ae_train)?;
            let val_rows: Vec<FeatureRow> = sets.ae_val.iter().chain(&s.anomaly_val).cloned().collect();
            guard.check(telemetry_anomaly::Stage::Fit, &val_rows)?;
            let truth: Vec<Label> = val_rows.iter().map(|r| r.label.unwrap_or(Label::Normal)).collect();
            let train_pts = Points::from_rows(&scaler.apply(&sets.ae_train));
            let val_pts = Points::from_rows(&scaler.apply(&val_rows));
            let result = grid_search(*model, &grid, &train_pts, &val_pts, &truth, cfg.seed)?;
            result.write_csv(File::create(out.join(format!("tuning_{}.csv", model.key())))?)?;
            write_json(&out.join(format!("tuning_{}.json", model.key())), &result)?;
            println!("best {:?} after {} evaluations", result.best, result.rows.len());
        }
        Command::Threshold { errors, table } => {
            let table = match (errors, table) {
                (_, Some(t)) => {
                    if !t.exists() {
                        return Err(Error::MissingFile(t.clone()));
                    }
                    PercentileTable::read_csv(File::open(t)?)?
                }
                (Some(e), None) => {
                    if !e.exists() {
                        return Err(Error::MissingFile(e.clone()));
                    }
                    let (errs, truth) = read_errors(e)?;
                    build_table(&errs, &truth, &default_percentiles())?
                }
                (None, None) => unreachable!("clap requires one of the inputs"),
            };
            let result = select_threshold(&table)?;
            table.write_csv(File::create(out.join("percentile_table.csv"))?)?;
            write_json(&out.join("threshold.json"), &result)?;
            println!(
                "percentile {} threshold {} precision {:?} recall {:?} specificity {:?}",
                result.percentile,
                result.threshold,
                result.metrics.precision,
                result.metrics.recall,
                result.metrics.specificity
            );
        }
        Command::Evaluate { split_dir, models_dir } => {
            let s = DatasetSplit::load(&split_dir.clone().unwrap_or_else(|| out.join("split")))?;
            let trained = TrainedModels::load(models_dir.as_deref().unwrap_or(&out))?;
            let eval = evaluate_models(&cfg, &trained, &s)?;
            write_reports(&out, &eval)?;
            print_reports(&eval.reports);
        }
        Command::Synth {
            synth_config,
            fish,
            days,
            single_station_rate,
            stationary_rate,
            skip_rate,
        } => {
            let mut sc = match synth_config {
                Some(p) => {
                    if !p.exists() {
                        return Err(Error::MissingFile(p.clone()));
                    }
                    toml::from_str::<SynthConfig>(&fs::read_to_string(p)?)
                        .map_err(|e| Error::InvalidConfig(e.to_string()))?
                }
                None => SynthConfig::default(),
            };
            if let Some(s) = cli.seed {
                sc.seed = s;
            }
            sc.n_fish = fish.unwrap_or(sc.n_fish);
            sc.span_days = days.unwrap_or(sc.span_days);
            sc.single_station_rate = single_station_rate.unwrap_or(sc.single_station_rate);
            sc.stationary_rate = stationary_rate.unwrap_or(sc.stationary_rate);
            sc.skip_rate = skip_rate.unwrap_or(sc.skip_rate);
            let data = generate(&sc)?;
            data.stations
                .write(BufWriter::new(File::create(out.join("stations.csv"))?))?;
            write_csv(&data.records, BufWriter::new(File::create(out.join("detections.csv"))?))?;
            write_ground_truth(&data, BufWriter::new(File::create(out.join("ground_truth.csv"))?))?;
            println!(
                "{} detections for {} fish, {} injected anomalies",
                data.records.len(),
                sc.n_fish,
                data.truth.anomaly_count()
            );
        }
        Command::Run(inputs) => {
            apply_inputs(&mut cfg, inputs);
            let outcome = run_experiment(&cfg)?;
            print_reports(&outcome.reports);
        }
    }
    Ok(())
}

fn read_errors(path: &Path) -> Result<(Vec<f64>, Vec<Label>)> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (ei, li) = (col("error")?, col("label")?);
    let mut errors = Vec::new();
    let mut labels = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || Error::InvalidData(format!("row {}: expected a numeric error and a 0/1 label", n + 1));
        errors.push(rec.get(ei).and_then(|s| s.parse::<f64>().ok()).ok_or_else(bad)?);
        labels.push(match rec.get(li) {
            Some("0") => Label::Anomaly,
            Some("1") => Label::Normal,
            _ => return Err(bad()),
        });
    }
    Ok((errors, labels))
}

fn print_reports(reports: &[telemetry_anomaly::metrics::ModelReport]) {
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    println!(
        "{:<8} {:>6} {:>6} {:>7} {:>6} {:>9} {:>9} {:>8}",
        "model", "TA", "FA", "TN", "FN", "recall", "precision", "FN frac"
    );
    for r in reports {
        let c = &r.confusion;
        println!(
            "{:<8} {:>6} {:>6} {:>7} {:>6} {:>9} {:>9} {:>8}",
            r.model,
            c.ta,
            c.fa,
            c.tn,
            c.fn_,
            fmt(r.metrics.recall),
            fmt(r.metrics.precision),
            fmt(r.fn_fraction)
        );
    }
}
