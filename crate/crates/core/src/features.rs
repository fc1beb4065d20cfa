//! Engineered per-detection features and min-max scaling.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{local_datetime, local_day, local_seconds_of_day, FishTrack, StationMap};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

pub const FEATURE_DIM: usize = 11;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "lat",
    "lon",
    "distance_km",
    "duration_same_station_s",
    "num_detections",
    "num_days_detected",
    "num_unique_stations",
    "consecutive_missing_stations",
    "hour_sin",
    "hour_cos",
    "day_of_year_norm",
];

pub const LAT: usize = 0;
pub const LON: usize = 1;
pub const DISTANCE_KM: usize = 2;
pub const DURATION_SAME_STATION: usize = 3;
pub const NUM_DETECTIONS: usize = 4;
pub const NUM_DAYS_DETECTED: usize = 5;
pub const NUM_UNIQUE_STATIONS: usize = 6;
pub const CONSECUTIVE_MISSING: usize = 7;
pub const HOUR_SIN: usize = 8;
pub const HOUR_COS: usize = 9;
pub const DAY_OF_YEAR: usize = 10;

/// Detection class. Anomalies are the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Anomaly = 0,
    Normal = 1,
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = Error;
    fn try_from(v: u8) -> Result<Label> {
        match v {
            0 => Ok(Label::Anomaly),
            1 => Ok(Label::Normal),
            other => Err(Error::InvalidData(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    /// Stable identifier used to track rows across splits.
    pub id: u64,
    pub fish_id: String,
    pub timestamp: i64,
    pub values: [f64; FEATURE_DIM],
    pub label: Option<Label>,
}

impl FeatureRow {
    pub fn is_normal(&self) -> bool {
        self.label == Some(Label::Normal)
    }

    pub fn is_anomaly(&self) -> bool {
        self.label == Some(Label::Anomaly)
    }
}

/// Great-circle distance in the units of `radius`. Coordinates in degrees.
pub fn haversine(lat_a: f64, lon_a: f64, lat_b: f64, lon_b: f64, radius: f64) -> f64 {
    let phi_a = lat_a.to_radians();
    let phi_b = lat_b.to_radians();
    let half_dphi = (phi_b - phi_a) / 2.0;
    let half_dlambda = (lon_b - lon_a).to_radians() / 2.0;
    let h = half_dphi.sin().powi(2) + phi_a.cos() * phi_b.cos() * half_dlambda.sin().powi(2);
    2.0 * radius * h.clamp(0.0, 1.0).sqrt().asin()
}

/// Cyclic hour-of-day encoding and normalised day of year for a timestamp,
/// all in local receiver time.
pub fn time_encodings(timestamp: i64) -> [f64; 3] {
    let angle = 2.0 * PI * local_seconds_of_day(timestamp) as f64 / 86_400.0;
    let doy = chrono::Datelike::ordinal0(&local_datetime(timestamp).date());
    [angle.sin(), angle.cos(), f64::from(doy) / 365.0]
}

/// Engineers one row per detection of a sorted track. Row ids start at 0.
pub fn engineer(track: &FishTrack, stations: &StationMap) -> Result<Vec<FeatureRow>> {
    let dets = &track.detections;
    let resolved = dets
        .iter()
        .map(|d| {
            stations
                .get(&d.station_id)
                .ok_or_else(|| Error::UnknownStation(d.station_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let num_detections = dets.len() as f64;
    let num_days = dets
        .iter()
        .map(|d| local_day(d.timestamp))
        .collect::<HashSet<_>>()
        .len() as f64;
    let num_unique = dets.iter().map(|d| d.station_id.as_str()).collect::<HashSet<_>>().len() as f64;

    let run_durations = same_station_runs(track)
        .into_iter()
        .flat_map(|run| {
            let span = (dets[run.end - 1].timestamp - dets[run.start].timestamp) as f64;
            std::iter::repeat_n(span, run.len())
        })
        .collect::<Vec<_>>();

    let mut rows = Vec::with_capacity(dets.len());
    for (i, d) in dets.iter().enumerate() {
        let (distance, missing) = if i == 0 {
            (0.0, 0.0)
        } else {
            let (prev, cur) = (resolved[i - 1], resolved[i]);
            let gap = prev.order_index.abs_diff(cur.order_index);
            (
                haversine(prev.lat, prev.lon, cur.lat, cur.lon, EARTH_RADIUS_KM),
                gap.saturating_sub(1) as f64,
            )
        };
        let [hour_sin, hour_cos, doy] = time_encodings(d.timestamp);
        rows.push(FeatureRow {
            id: i as u64,
            fish_id: track.fish_id.clone(),
            timestamp: d.timestamp,
            values: [
                d.lat,
                d.lon,
                distance,
                run_durations[i],
                num_detections,
                num_days,
                num_unique,
                missing,
                hour_sin,
                hour_cos,
                doy,
            ],
            label: None,
        });
    }
    Ok(rows)
}

/// Engineers every track and numbers rows consecutively across tracks.
pub fn engineer_all(tracks: &[FishTrack], stations: &StationMap) -> Result<Vec<FeatureRow>> {
    let mut all = Vec::with_capacity(tracks.iter().map(|t| t.detections.len()).sum());
    for t in tracks {
        all.extend(engineer(t, stations)?);
    }
    for (i, r) in all.iter_mut().enumerate() {
        r.id = i as u64;
    }
    Ok(all)
}

/// Half-open index range of consecutive detections at one station.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub start: usize,
    pub end: usize,
}

impl Run {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Maximal runs of consecutive same-station detections in a sorted track.
pub fn same_station_runs(track: &FishTrack) -> Vec<Run> {
    let dets = &track.detections;
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=dets.len() {
        if i == dets.len() || dets[i].station_id != dets[start].station_id {
            if i > start {
                runs.push(Run { start, end: i });
            }
            start = i;
        }
    }
    runs
}

/// Per-dimension min-max scaler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaler {
    pub fn fit<'a, I>(rows: I) -> Result<Scaler>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut iter = rows.into_iter();
        let first = iter.next().ok_or(Error::EmptyInput("scaler fit set"))?;
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for row in iter {
            if row.len() != min.len() {
                return Err(Error::DimensionMismatch {
                    expected: min.len(),
                    got: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Scaler { min, max })
    }

    pub fn fit_rows(rows: &[FeatureRow]) -> Result<Scaler> {
        Scaler::fit(rows.iter().map(|r| &r.values[..]))
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Maps fitted data into `[0, 1]`; values outside the fitted range are
    /// not clipped. Constant dimensions map to 0.
    pub fn transform_in_place(&self, values: &mut [f64]) {
        for (j, v) in values.iter_mut().enumerate() {
            let range = self.max[j] - self.min[j];
            *v = if range > 0.0 { (*v - self.min[j]) / range } else { 0.0 };
        }
    }

    pub fn apply(&self, rows: &[FeatureRow]) -> Vec<FeatureRow> {
        rows.iter()
            .map(|r| {
                let mut r = r.clone();
                self.transform_in_place(&mut r.values);
                r
            })
            .collect()
    }
}

pub fn write_rows<W: Write>(rows: &[FeatureRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["row_id", "fish_id", "timestamp"];
    header.extend(FEATURE_NAMES);
    header.push("label");
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.id.to_string(), r.fish_id.clone(), r.timestamp.to_string()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        rec.push(r.label.map(|l| (l as u8).to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(reader: R) -> Result<Vec<FeatureRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_col = col("row_id")?;
    let fish_col = col("fish_id")?;
    let ts_col = col("timestamp")?;
    let label_col = col("label")?;
    let value_cols = FEATURE_NAMES.iter().map(|n| col(n)).collect::<Result<Vec<_>>>()?;
    let bad = |what: &str, v: &str| Error::InvalidData(format!("feature file: bad {what} `{v}`"));

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        let mut values = [0.0; FEATURE_DIM];
        for (v, &c) in values.iter_mut().zip(&value_cols) {
            *v = get(c).parse().map_err(|_| bad(FEATURE_NAMES[0], get(c)))?;
        }
        let label = match get(label_col) {
            "" => None,
            s => Some(Label::try_from(s.parse::<u8>().map_err(|_| bad("label", s))?)?),
        };
        rows.push(FeatureRow {
            id: get(id_col).parse().map_err(|_| bad("row_id", get(id_col)))?,
            fish_id: get(fish_col).to_string(),
            timestamp: get(ts_col).parse().map_err(|_| bad("timestamp", get(ts_col)))?,
            values,
            label,
        });
    }
    Ok(rows)
}
