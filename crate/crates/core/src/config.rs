//! Run configuration, read from a flat TOML file.
//!
//! ```toml
//! input = "detections.csv"
//! stations = "stations.csv"
//! out_dir = "out"
//! seed = 7
//! resample = "auto"        # "none", "auto" or a number of seconds
//! max_points = 40000
//! models = ["nn-ae", "if", "lof", "dbscan"]
//! ```
//!
//! Every key is optional except the two input paths when running the full
//! pipeline; see [`RunConfig::default`] for the remaining defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resampling::DEFAULT_MAX_POINTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ResampleMode {
    None,
    Auto,
    Fixed(i64),
}

impl FromStr for ResampleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "none" | "off" => Ok(ResampleMode::None),
            "auto" => Ok(ResampleMode::Auto),
            _ => t
                .trim_end_matches('s')
                .parse::<i64>()
                .ok()
                .filter(|&v| v > 0)
                .map(ResampleMode::Fixed)
                .ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "resample must be none, auto or a positive number of seconds, got {s:?}"
                    ))
                }),
        }
    }
}

impl TryFrom<String> for ResampleMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ResampleMode> for String {
    fn from(m: ResampleMode) -> String {
        m.to_string()
    }
}

impl fmt::Display for ResampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResampleMode::None => f.write_str("none"),
            ResampleMode::Auto => f.write_str("auto"),
            ResampleMode::Fixed(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitUnit {
    Detection,
    Fish,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "nn-ae")]
    Autoencoder,
    #[serde(rename = "if")]
    IsolationForest,
    #[serde(rename = "lof")]
    Lof,
    #[serde(rename = "dbscan")]
    Dbscan,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Autoencoder,
        ModelKind::IsolationForest,
        ModelKind::Lof,
        ModelKind::Dbscan,
    ];

    /// Name used in reports and tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Autoencoder => "NN-AE",
            ModelKind::IsolationForest => "IF",
            ModelKind::Lof => "LOF",
            ModelKind::Dbscan => "DBSCAN",
        }
    }

    /// Short key used in config files, file names and on the command line.
    pub fn key(self) -> &'static str {
        match self {
            ModelKind::Autoencoder => "nn-ae",
            ModelKind::IsolationForest => "if",
            ModelKind::Lof => "lof",
            ModelKind::Dbscan => "dbscan",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        ModelKind::ALL
            .into_iter()
            .find(|k| k.key() == t || k.display_name().eq_ignore_ascii_case(&t))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model {s:?}; expected nn-ae, if, lof or dbscan")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub stations: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,

    pub split_unit: SplitUnit,
    pub normal_test_fraction: f64,
    pub anomaly_test_fraction: f64,
    pub ae_validation_fraction: f64,

    pub resample: ResampleMode,
    pub max_points: usize,

    pub models: Vec<ModelKind>,

    pub if_n_estimators: usize,
    pub if_contamination: f64,
    pub if_subsample: usize,
    pub lof_neighbors: usize,
    pub lof_contamination: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_samples: usize,
    pub ae_units: usize,
    pub ae_bottleneck: usize,
    pub ae_learning_rate: f64,
    pub ae_batch_size: usize,
    pub ae_epochs: usize,

    /// Number of reshuffled re-runs behind the reported intervals; 0 or 1
    /// disables them.
    pub ci_repeats: usize,
    /// Store wall-clock training times in the report. Off by default so
    /// reports are byte-identical across reruns.
    pub record_runtime: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            stations: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            split_unit: SplitUnit::Detection,
            normal_test_fraction: 0.10,
            anomaly_test_fraction: 0.50,
            ae_validation_fraction: 0.20,
            resample: ResampleMode::Auto,
            max_points: DEFAULT_MAX_POINTS,
            models: ModelKind::ALL.to_vec(),
            if_n_estimators: 100,
            if_contamination: 0.001,
            if_subsample: 256,
            lof_neighbors: 5,
            lof_contamination: 0.01,
            dbscan_eps: 0.5,
            dbscan_min_samples: 10,
            ae_units: 128,
            ae_bottleneck: 2,
            ae_learning_rate: 0.001,
            ae_batch_size: 512,
            ae_epochs: 50,
            ci_repeats: 0,
            record_runtime: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("normal_test_fraction", self.normal_test_fraction),
            ("anomaly_test_fraction", self.anomaly_test_fraction),
            ("ae_validation_fraction", self.ae_validation_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.max_points == 0 {
            return Err(Error::InvalidConfig("max_points must be positive".into()));
        }
        if self.models.is_empty() {
            return Err(Error::InvalidConfig("no models selected".into()));
        }
        Ok(())
    }

    pub fn has_model(&self, kind: ModelKind) -> bool {
        self.models.contains(&kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_modes_parse() {
        assert_eq!("auto".parse::<ResampleMode>().unwrap(), ResampleMode::Auto);
        assert_eq!("None".parse::<ResampleMode>().unwrap(), ResampleMode::None);
        assert_eq!("90".parse::<ResampleMode>().unwrap(), ResampleMode::Fixed(90));
        assert_eq!("65s".parse::<ResampleMode>().unwrap(), ResampleMode::Fixed(65));
        assert!("-3".parse::<ResampleMode>().is_err());
        assert!("sometimes".parse::<ResampleMode>().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::from_toml(
            r#"
            input = "d.csv"
            stations = "s.csv"
            seed = 9
            resample = "90"
            models = ["nn-ae", "dbscan"]
            split_unit = "fish"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.resample, ResampleMode::Fixed(90));
        assert_eq!(cfg.models, vec![ModelKind::Autoencoder, ModelKind::Dbscan]);
        assert_eq!(cfg.split_unit, SplitUnit::Fish);
        assert_eq!(cfg.lof_neighbors, 5);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml("normal_test_fraction = 1.5").is_err());
        assert!(RunConfig::from_toml("unknown_key = 1").is_err());
        assert!(RunConfig::from_toml("models = []").is_err());
        assert!(matches!(
            RunConfig::load(Path::new("/nonexistent.toml")),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    fn model_names() {
        assert_eq!("LOF".parse::<ModelKind>().unwrap(), ModelKind::Lof);
        assert_eq!("nn-ae".parse::<ModelKind>().unwrap(), ModelKind::Autoencoder);
        assert!("svm".parse::<ModelKind>().is_err());
    }
}
