//! Rule-based labelling of detections.
//!
//! A detection is an anomaly (label 0) when any of three movement rules
//! fires for it:
//!
//! 1. the fish was only ever detected at a single station;
//! 2. the fish moved between stations but later stayed at one station for
//!    more than 120 days (every detection of that stay is flagged);
//! 3. the fish appeared at a station after skipping more than one station
//!    along the estuary (the arrival detection is flagged).

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{engineer_all, same_station_runs, FeatureRow, Label};
use crate::ingest::{FishTrack, StationMap, SECONDS_PER_DAY};

pub const STATIONARY_LIMIT_S: i64 = 120 * SECONDS_PER_DAY;

pub const SINGLE_STATION_BIT: u8 = 0b001;
pub const STATIONARY_BIT: u8 = 0b010;
pub const SKIPPED_STATIONS_BIT: u8 = 0b100;

pub fn criterion_single_station(track: &FishTrack) -> Vec<bool> {
    let single = distinct_stations(track) == 1;
    vec![single; track.detections.len()]
}

pub fn criterion_stationary_120d(track: &FishTrack) -> Vec<bool> {
    let mut flags = vec![false; track.detections.len()];
    if distinct_stations(track) < 2 {
        return flags;
    }
    let dets = &track.detections;
    for run in same_station_runs(track) {
        if dets[run.end - 1].timestamp - dets[run.start].timestamp > STATIONARY_LIMIT_S {
            flags[run.start..run.end].fill(true);
        }
    }
    flags
}

pub fn criterion_skipped_stations(track: &FishTrack, stations: &StationMap) -> Result<Vec<bool>> {
    let orders = track
        .detections
        .iter()
        .map(|d| {
            stations
                .order(&d.station_id)
                .ok_or_else(|| Error::UnknownStation(d.station_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut flags = vec![false; orders.len()];
    for i in 1..orders.len() {
        flags[i] = orders[i].abs_diff(orders[i - 1]).saturating_sub(1) > 1;
    }
    Ok(flags)
}

fn distinct_stations(track: &FishTrack) -> usize {
    track
        .detections
        .iter()
        .map(|d| d.station_id.as_str())
        .collect::<HashSet<_>>()
        .len()
}

/// Criterion bit mask for every detection of a track.
pub fn criterion_masks(track: &FishTrack, stations: &StationMap) -> Result<Vec<u8>> {
    let c1 = criterion_single_station(track);
    let c2 = criterion_stationary_120d(track);
    let c3 = criterion_skipped_stations(track, stations)?;
    Ok((0..c1.len())
        .map(|i| {
            (c1[i] as u8) * SINGLE_STATION_BIT + (c2[i] as u8) * STATIONARY_BIT + (c3[i] as u8) * SKIPPED_STATIONS_BIT
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FishFlags {
    pub detections: usize,
    pub single_station: usize,
    pub stationary: usize,
    pub skipped_stations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelReport {
    pub single_station: usize,
    pub stationary: usize,
    pub skipped_stations: usize,
    pub normal: usize,
    pub anomaly: usize,
    pub per_fish: BTreeMap<String, FishFlags>,
}

impl LabelReport {
    pub fn total(&self) -> usize {
        self.normal + self.anomaly
    }
}

#[derive(Debug, Clone)]
pub struct Labelled {
    pub rows: Vec<FeatureRow>,
    /// Criterion bits per row, parallel to `rows`.
    pub masks: Vec<u8>,
    pub report: LabelReport,
}

/// Engineers features for every track and labels each row.
pub fn label_all(tracks: &[FishTrack], stations: &StationMap) -> Result<Labelled> {
    let mut rows = engineer_all(tracks, stations)?;
    let mut masks = Vec::with_capacity(rows.len());
    let mut report = LabelReport::default();
    for t in tracks {
        let m = criterion_masks(t, stations)?;
        let flags = report.per_fish.entry(t.fish_id.clone()).or_default();
        flags.detections += m.len();
        for &bits in &m {
            flags.single_station += usize::from(bits & SINGLE_STATION_BIT != 0);
            flags.stationary += usize::from(bits & STATIONARY_BIT != 0);
            flags.skipped_stations += usize::from(bits & SKIPPED_STATIONS_BIT != 0);
        }
        masks.extend(m);
    }
    for (row, &bits) in rows.iter_mut().zip(&masks) {
        row.label = Some(if bits == 0 { Label::Normal } else { Label::Anomaly });
    }
    for f in report.per_fish.values() {
        report.single_station += f.single_station;
        report.stationary += f.stationary;
        report.skipped_stations += f.skipped_stations;
    }
    report.anomaly = masks.iter().filter(|&&b| b != 0).count();
    report.normal = masks.len() - report.anomaly;
    Ok(Labelled { rows, masks, report })
}

pub fn write_label_dump<W: Write>(labelled: &Labelled, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["fish_id", "timestamp", "label", "criterion_mask"])?;
    for (r, m) in labelled.rows.iter().zip(&labelled.masks) {
        w.write_record([
            r.fish_id.clone(),
            r.timestamp.to_string(),
            r.label.map(|l| (l as u8).to_string()).unwrap_or_default(),
            m.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{DetectionRecord, Station};

    fn map(n: usize) -> StationMap {
        StationMap::new(
            (0..n)
                .map(|i| Station {
                    station_id: format!("S{i}"),
                    lat: -34.40 + 0.03 * i as f64,
                    lon: 20.85,
                    order_index: i,
                })
                .collect(),
        )
        .unwrap()
    }

    fn track(visits: &[(usize, i64)]) -> FishTrack {
        FishTrack {
            fish_id: "F".into(),
            detections: visits
                .iter()
                .map(|&(s, ts)| DetectionRecord {
                    fish_id: "F".into(),
                    receiver_id: "R".into(),
                    station_id: format!("S{s}"),
                    lat: -34.40 + 0.03 * s as f64,
                    lon: 20.85,
                    timestamp: ts,
                })
                .collect(),
        }
    }

    const DAY: i64 = SECONDS_PER_DAY;

    #[test]
    fn single_station_flags_everything() {
        assert_eq!(
            criterion_single_station(&track(&[(2, 0), (2, 10), (2, 20)])),
            vec![true; 3]
        );
        assert_eq!(criterion_single_station(&track(&[(2, 0), (3, 10)])), vec![false; 2]);
        assert!(criterion_single_station(&track(&[])).is_empty());
    }

    #[test]
    fn stationary_run_longer_than_limit_is_flagged() {
        let t = track(&[(0, 0), (1, DAY), (2, 2 * DAY), (3, 3 * DAY), (3, 133 * DAY)]);
        assert_eq!(criterion_stationary_120d(&t), vec![false, false, false, true, true]);
    }

    #[test]
    fn stationary_run_of_exactly_limit_is_not_flagged() {
        let t = track(&[(0, 0), (1, DAY), (1, 121 * DAY)]);
        assert_eq!(criterion_stationary_120d(&t), vec![false; 3]);
        let t = track(&[(0, 0), (1, DAY), (1, 121 * DAY + 1)]);
        assert_eq!(criterion_stationary_120d(&t), vec![false, true, true]);
    }

    #[test]
    fn stationary_criterion_ignores_single_station_fish() {
        let t = track(&[(4, 0), (4, 200 * DAY)]);
        assert_eq!(criterion_stationary_120d(&t), vec![false; 2]);
    }

    #[test]
    fn skipped_stations() {
        let s = map(8);
        let flags = criterion_skipped_stations(&track(&[(1, 0), (5, 10), (4, 20), (6, 30), (7, 40)]), &s).unwrap();
        assert_eq!(flags, vec![false, true, false, false, false]);
    }

    #[test]
    fn clean_dataset_is_all_normal() {
        let s = map(5);
        let tracks = vec![track(&[(0, 0), (1, 100), (2, 200), (1, 300)])];
        let out = label_all(&tracks, &s).unwrap();
        assert!(out.rows.iter().all(|r| r.is_normal()));
        assert_eq!(out.report.anomaly, 0);
        assert_eq!(out.report.total(), 4);
    }

    #[test]
    fn union_of_criteria() {
        let s = map(8);
        let tracks = vec![
            track(&[(0, 0), (1, DAY), (4, 2 * DAY), (4, 130 * DAY)]),
            FishTrack {
                fish_id: "G".into(),
                detections: track(&[(6, 0), (6, 10)])
                    .detections
                    .into_iter()
                    .map(|mut d| {
                        d.fish_id = "G".into();
                        d
                    })
                    .collect(),
            },
        ];
        let out = label_all(&tracks, &s).unwrap();
        assert_eq!(
            out.masks,
            vec![0, 0, STATIONARY_BIT | SKIPPED_STATIONS_BIT, STATIONARY_BIT, 1, 1]
        );
        let labels: Vec<_> = out.rows.iter().map(|r| r.label.unwrap() as u8).collect();
        assert_eq!(labels, vec![1, 1, 0, 0, 0, 0]);
        assert_eq!(out.report.anomaly, 4);
        assert_eq!(out.report.stationary, 2);
        assert_eq!(out.report.skipped_stations, 1);
        assert_eq!(out.report.single_station, 2);
    }
}
