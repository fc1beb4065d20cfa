//! Detection CSV parsing, validation, de-duplication and per-fish grouping.
//!
//! Detection files carry the receiver export columns
//! `fishid,receiver,station,lat,lon,date,time_sa`, where `date` is
//! `YYYY-MM-DD` and `time_sa` is `HH:MM:SS` in local time (UTC+2, no
//! daylight saving). Timestamps are stored as epoch seconds.
//!
//! Station maps are `station,lat,lon,order` files, `order` giving each
//! receiver's position along the estuary (0 at one end).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offset of local receiver time from UTC.
pub const LOCAL_UTC_OFFSET_S: i64 = 2 * 3600;
pub const SECONDS_PER_DAY: i64 = 86_400;

const DETECTION_COLUMNS: [&str; 7] = ["fishid", "receiver", "station", "lat", "lon", "date", "time_sa"];
const STATION_COLUMNS: [&str; 4] = ["station", "lat", "lon", "order"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub fish_id: String,
    pub receiver_id: String,
    pub station_id: String,
    pub lat: f64,
    pub lon: f64,
    /// Epoch seconds (UTC).
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FishTrack {
    pub fish_id: String,
    /// Sorted by `(timestamp, station_id)`.
    pub detections: Vec<DetectionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub station_id: String,
    pub lat: f64,
    pub lon: f64,
    pub order_index: usize,
}

/// Receiver stations ordered along the estuary.
#[derive(Debug, Clone, PartialEq)]
pub struct StationMap {
    stations: Vec<Station>,
    by_id: HashMap<String, usize>,
}

impl StationMap {
    /// Builds a map, checking that ids are unique and that order indices
    /// are exactly `0..len`.
    pub fn new(mut stations: Vec<Station>) -> Result<Self> {
        if stations.is_empty() {
            return Err(Error::EmptyInput("station map"));
        }
        stations.sort_by_key(|s| s.order_index);
        let mut by_id = HashMap::with_capacity(stations.len());
        for (i, s) in stations.iter().enumerate() {
            if s.order_index != i {
                return Err(Error::InvalidData(format!(
                    "station order indices must be contiguous from 0; found {} at position {}",
                    s.order_index, i
                )));
            }
            if !valid_coordinates(s.lat, s.lon) {
                return Err(Error::InvalidData(format!(
                    "station {} has out-of-range coordinates ({}, {})",
                    s.station_id, s.lat, s.lon
                )));
            }
            if by_id.insert(s.station_id.clone(), i).is_some() {
                return Err(Error::InvalidData(format!("duplicate station id {}", s.station_id)));
            }
        }
        Ok(StationMap { stations, by_id })
    }

    pub fn get(&self, station_id: &str) -> Option<&Station> {
        self.by_id.get(station_id).map(|&i| &self.stations[i])
    }

    pub fn order(&self, station_id: &str) -> Option<usize> {
        self.get(station_id).map(|s| s.order_index)
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = open(path)?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let idx = column_indices(rdr.headers()?, &STATION_COLUMNS)?;
        let mut stations = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let field = |i: usize| row.get(idx[i]).unwrap_or("");
            let parse_f = |i: usize| {
                field(i).parse::<f64>().map_err(|_| {
                    Error::InvalidData(format!("station map: bad {} value `{}`", STATION_COLUMNS[i], field(i)))
                })
            };
            stations.push(Station {
                station_id: field(0).to_string(),
                lat: parse_f(1)?,
                lon: parse_f(2)?,
                order_index: field(3)
                    .parse()
                    .map_err(|_| Error::InvalidData(format!("station map: bad order `{}`", field(3))))?,
            });
        }
        StationMap::new(stations)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(STATION_COLUMNS)?;
        for s in &self.stations {
            w.write_record([
                s.station_id.clone(),
                s.lat.to_string(),
                s.lon.to_string(),
                s.order_index.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Rows dropped while parsing, by reason.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounts {
    pub malformed: usize,
    pub unknown_station: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub records: Vec<DetectionRecord>,
    pub dropped: DropCounts,
}

pub fn parse_csv(path: &Path, stations: &StationMap) -> Result<ParseOutcome> {
    parse_reader(open(path)?, stations)
}

/// Parses detection rows. Rows with unparseable coordinates or timestamps, or
/// referencing a station absent from `stations`, are dropped and counted.
pub fn parse_reader<R: Read>(reader: R, stations: &StationMap) -> Result<ParseOutcome> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let idx = column_indices(rdr.headers()?, &DETECTION_COLUMNS)?;
    let mut out = ParseOutcome::default();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        let field = |i: usize| row.get(idx[i]);
        let parsed = (|| {
            let lat: f64 = field(3)?.parse().ok()?;
            let lon: f64 = field(4)?.parse().ok()?;
            if !valid_coordinates(lat, lon) {
                return None;
            }
            let timestamp = parse_local_timestamp(field(5)?, field(6)?)?;
            let fish_id = field(0)?;
            let station_id = field(2)?;
            if fish_id.is_empty() || station_id.is_empty() {
                return None;
            }
            Some(DetectionRecord {
                fish_id: fish_id.to_string(),
                receiver_id: field(1)?.to_string(),
                station_id: station_id.to_string(),
                lat,
                lon,
                timestamp,
            })
        })();
        match parsed {
            None => {
                out.dropped.malformed += 1;
                warn!("dropping malformed detection on data line {}", line + 1);
            }
            Some(rec) if stations.get(&rec.station_id).is_none() => {
                out.dropped.unknown_station += 1;
                warn!(
                    "dropping detection on data line {}: station {} not in station map",
                    line + 1,
                    rec.station_id
                );
            }
            Some(rec) => out.records.push(rec),
        }
    }
    Ok(out)
}

pub fn write_csv<W: Write>(records: &[DetectionRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(DETECTION_COLUMNS)?;
    for r in records {
        let local = local_datetime(r.timestamp);
        w.write_record([
            r.fish_id.as_str(),
            r.receiver_id.as_str(),
            r.station_id.as_str(),
            &r.lat.to_string(),
            &r.lon.to_string(),
            &local.format("%Y-%m-%d").to_string(),
            &local.format("%H:%M:%S").to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Removes repeated `(fish_id, station_id, timestamp)` detections, keeping the
/// first occurrence. Returns the retained rows and the number removed.
pub fn deduplicate(records: Vec<DetectionRecord>) -> (Vec<DetectionRecord>, usize) {
    let before = records.len();
    let mut seen = HashSet::with_capacity(records.len());
    let kept: Vec<_> = records
        .into_iter()
        .filter(|r| seen.insert((r.fish_id.clone(), r.station_id.clone(), r.timestamp)))
        .collect();
    let removed = before - kept.len();
    (kept, removed)
}

/// One track per fish, ordered by fish id; detections ascending in time.
pub fn group_tracks(records: Vec<DetectionRecord>) -> Vec<FishTrack> {
    let mut by_fish: BTreeMap<String, Vec<DetectionRecord>> = BTreeMap::new();
    for r in records {
        by_fish.entry(r.fish_id.clone()).or_default().push(r);
    }
    by_fish
        .into_iter()
        .map(|(fish_id, mut detections)| {
            detections.sort_by(|a, b| {
                a.timestamp
                    .cmp(&b.timestamp)
                    .then_with(|| a.station_id.cmp(&b.station_id))
            });
            FishTrack { fish_id, detections }
        })
        .collect()
}

pub fn valid_coordinates(lat: f64, lon: f64) -> bool {
    (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon)
}

pub fn parse_local_timestamp(date: &str, time: &str) -> Option<i64> {
    let d = NaiveDate::parse_from_str(date, "%Y-%m-%d").ok()?;
    let t = NaiveTime::parse_from_str(time, "%H:%M:%S").ok()?;
    Some(NaiveDateTime::new(d, t).and_utc().timestamp() - LOCAL_UTC_OFFSET_S)
}

pub fn local_datetime(timestamp: i64) -> NaiveDateTime {
    chrono::DateTime::from_timestamp(timestamp + LOCAL_UTC_OFFSET_S, 0)
        .expect("timestamp within chrono range")
        .naive_utc()
}

/// Local calendar day number (days since 1970-01-01 in UTC+2).
pub fn local_day(timestamp: i64) -> i64 {
    (timestamp + LOCAL_UTC_OFFSET_S).div_euclid(SECONDS_PER_DAY)
}

pub fn local_seconds_of_day(timestamp: i64) -> i64 {
    (timestamp + LOCAL_UTC_OFFSET_S).rem_euclid(SECONDS_PER_DAY)
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn column_indices(headers: &csv::StringRecord, required: &[&str]) -> Result<Vec<usize>> {
    required
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        })
        .collect()
}
