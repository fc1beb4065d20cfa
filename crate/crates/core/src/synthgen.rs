//! Synthetic detection tracks with injected anomalies and ground truth.
//!
//! Stations sit at equal arc spacing along a meandering polyline. A normal
//! fish walks between adjacent stations, staying at each for an
//! exponentially distributed dwell time during which it is detected in
//! Poisson-timed bursts. Anomalous behaviour is injected by construction:
//! fish that never leave one station, walks ending in a long stationary
//! run, and jumps that skip at least two stations.

use std::f64::consts::PI;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{DetectionRecord, Station, StationMap, SECONDS_PER_DAY};
use crate::labelling::{SINGLE_STATION_BIT, SKIPPED_STATIONS_BIT, STATIONARY_BIT, STATIONARY_LIMIT_S};
use crate::metrics::derive_seed;

/// 2017-01-01 00:00 at UTC+2.
pub const DEFAULT_START: i64 = 1_483_221_600;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_fish: usize,
    pub n_stations: usize,
    pub estuary_length_km: f64,
    pub start_timestamp: i64,
    pub span_days: f64,
    pub mean_dwell_hours: f64,
    pub bursts_per_hour: f64,
    pub mean_burst_size: f64,
    pub mean_burst_gap_s: f64,
    /// Share of fish detected at a single station only.
    pub single_station_rate: f64,
    /// Share of fish whose walk ends in a stationary run.
    pub stationary_rate: f64,
    pub stationary_days: f64,
    /// Probability that a station change skips two or more stations.
    pub skip_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_fish: 25,
            n_stations: 16,
            estuary_length_km: 52.0,
            start_timestamp: DEFAULT_START,
            span_days: 60.0,
            mean_dwell_hours: 4.0,
            bursts_per_hour: 0.5,
            mean_burst_size: 3.0,
            mean_burst_gap_s: 90.0,
            single_station_rate: 0.0,
            stationary_rate: 0.0,
            stationary_days: 130.0,
            skip_rate: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_fish == 0 {
            return bad("n_fish must be positive".into());
        }
        if self.n_stations < 3 {
            return bad(format!("n_stations must be at least 3, got {}", self.n_stations));
        }
        for (name, v) in [
            ("single_station_rate", self.single_station_rate),
            ("stationary_rate", self.stationary_rate),
            ("skip_rate", self.skip_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.single_station_rate + self.stationary_rate > 1.0 {
            return bad("single_station_rate + stationary_rate exceeds 1".into());
        }
        for (name, v) in [
            ("estuary_length_km", self.estuary_length_km),
            ("span_days", self.span_days),
            ("mean_dwell_hours", self.mean_dwell_hours),
            ("bursts_per_hour", self.bursts_per_hour),
            ("mean_burst_gap_s", self.mean_burst_gap_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.mean_burst_size.is_nan() || self.mean_burst_size < 1.0 {
            return bad(format!(
                "mean_burst_size must be at least 1, got {}",
                self.mean_burst_size
            ));
        }
        let limit_days = (STATIONARY_LIMIT_S / SECONDS_PER_DAY) as f64;
        if self.stationary_rate > 0.0 {
            if self.stationary_days <= limit_days {
                return bad(format!("stationary_days must exceed {limit_days}"));
            }
            if self.span_days < self.stationary_days + 1.0 {
                return bad("span_days too short for the stationary run".into());
            }
        } else if self.span_days >= limit_days && self.mean_dwell_hours * 24.0 > limit_days {
            return bad("dwell times this long would create accidental stationary runs".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FishKind {
    Normal,
    SingleStation,
    Stationary,
}

/// Injected criterion bits per detection, aligned with the generated
/// records (fish order, then time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub masks: Vec<u8>,
    pub fish_kinds: Vec<(String, FishKind)>,
}

impl GroundTruth {
    pub fn anomaly_count(&self) -> usize {
        self.masks.iter().filter(|&&m| m != 0).count()
    }

    pub fn count_bit(&self, bit: u8) -> usize {
        self.masks.iter().filter(|&&m| m & bit != 0).count()
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub records: Vec<DetectionRecord>,
    pub stations: StationMap,
    pub truth: GroundTruth,
}

/// Stations at equal arc length along a meandering line heading roughly
/// north-east from the river mouth.
pub fn station_layout(n_stations: usize, length_km: f64) -> Result<StationMap> {
    const KM_PER_DEG_LAT: f64 = 111.195;
    let (lat0, lon0) = (-34.405, 20.853);
    let spacing = length_km / (n_stations - 1) as f64;
    let substeps = 200;
    let (mut lat, mut lon, mut s) = (lat0, lon0, 0.0);
    let mut stations = Vec::with_capacity(n_stations);
    for i in 0..n_stations {
        if i > 0 {
            let h = spacing / substeps as f64;
            for _ in 0..substeps {
                let heading = PI / 4.0 + 0.5 * (2.0 * PI * s / 20.0).sin();
                lat += h * heading.cos() / KM_PER_DEG_LAT;
                lon += h * heading.sin() / (KM_PER_DEG_LAT * lat.to_radians().cos());
                s += h;
            }
        }
        stations.push(Station {
            station_id: format!("S{i:02}"),
            lat,
            lon,
            order_index: i,
        });
    }
    StationMap::new(stations)
}

struct Emitter<'a> {
    cfg: &'a SynthConfig,
    stations: &'a StationMap,
    fish_id: String,
    records: Vec<DetectionRecord>,
    masks: Vec<u8>,
    cursor: i64,
}

impl Emitter<'_> {
    fn detect(&mut self, station: usize, at: i64, mask: u8) {
        let s = &self.stations.stations()[station];
        let t = at.max(self.cursor + 1);
        self.records.push(DetectionRecord {
            fish_id: self.fish_id.clone(),
            receiver_id: format!("R{station:02}"),
            station_id: s.station_id.clone(),
            lat: s.lat,
            lon: s.lon,
            timestamp: t,
        });
        self.masks.push(mask);
        self.cursor = t;
    }

    fn burst<R: Rng>(&mut self, rng: &mut R, station: usize, at: i64, first_mask: u8, mask: u8) {
        let extra = match Poisson::new(self.cfg.mean_burst_size - 1.0) {
            Ok(p) => p.sample(rng) as usize,
            Err(_) => 0,
        };
        let gap = Exp::new(1.0 / self.cfg.mean_burst_gap_s).expect("validated rate");
        self.detect(station, at, first_mask);
        for _ in 0..extra {
            let at = self.cursor + (gap.sample(rng).ceil() as i64).max(1);
            self.detect(station, at, mask);
        }
    }

    /// Detections during a stay at `station` over `[start, end)`. The stay
    /// always opens with a burst so no visit goes unrecorded.
    fn stay<R: Rng>(&mut self, rng: &mut R, station: usize, start: i64, end: i64, arrival_mask: u8, mask: u8) {
        let between = Exp::new(self.cfg.bursts_per_hour / 3600.0).expect("validated rate");
        self.burst(rng, station, start, arrival_mask | mask, mask);
        let mut t = start as f64;
        loop {
            t += between.sample(rng);
            if t >= end as f64 {
                break;
            }
            self.burst(rng, station, t as i64, mask, mask);
        }
    }
}

fn next_station<R: Rng>(rng: &mut R, current: usize, n: usize, skip_rate: f64) -> (usize, bool) {
    let up = rng.gen_bool(0.5);
    if skip_rate > 0.0 && rng.gen_bool(skip_rate) {
        let size = rng.gen_range(3..=4usize);
        let candidates = [
            (up, current + size),
            (!up, current.wrapping_sub(size)),
            (up, current + 3),
            (!up, current.wrapping_sub(3)),
        ];
        if let Some(&(_, s)) = candidates.iter().find(|(_, s)| *s < n) {
            return (s, true);
        }
    }
    let s = match (up, current) {
        (true, c) if c + 1 < n => c + 1,
        (false, 0) => 1,
        (false, c) => c - 1,
        (true, c) => c - 1,
    };
    (s, false)
}

fn generate_fish(
    cfg: &SynthConfig,
    stations: &StationMap,
    index: usize,
    kind: FishKind,
) -> (Vec<DetectionRecord>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index as u64));
    let n = stations.len();
    let mut em = Emitter {
        cfg,
        stations,
        fish_id: format!("F{index:04}"),
        records: Vec::new(),
        masks: Vec::new(),
        cursor: i64::MIN / 2,
    };
    let start = cfg.start_timestamp + rng.gen_range(0..SECONDS_PER_DAY);
    let end = cfg.start_timestamp + (cfg.span_days * SECONDS_PER_DAY as f64) as i64;
    let mut station = rng.gen_range(0..n);
    if kind == FishKind::SingleStation {
        em.stay(&mut rng, station, start, end, 0, SINGLE_STATION_BIT);
        return (em.records, em.masks);
    }
    let walk_end = match kind {
        FishKind::Stationary => end - (cfg.stationary_days * SECONDS_PER_DAY as f64) as i64,
        _ => end,
    };
    let dwell = Exp::new(1.0 / (cfg.mean_dwell_hours * 3600.0)).expect("validated rate");
    let mut t = start;
    let mut arrival = 0u8;
    let mut moved = false;
    while t < walk_end || (kind == FishKind::Stationary && !moved) {
        let stay_end = (t + dwell.sample(&mut rng) as i64).min(walk_end).max(t + 1);
        em.stay(&mut rng, station, t, stay_end, arrival, 0);
        let (next, skipped) = next_station(&mut rng, station, n, cfg.skip_rate);
        station = next;
        arrival = if skipped { SKIPPED_STATIONS_BIT } else { 0 };
        moved = true;
        t = stay_end.max(em.cursor + 1);
    }
    if kind == FishKind::Stationary {
        let first = em.records.len();
        em.stay(&mut rng, station, t, t.max(end) + 1, arrival, STATIONARY_BIT);
        // The run must exceed the limit from its first to its last detection.
        let run_start = em.records[first].timestamp;
        if em.cursor - run_start <= STATIONARY_LIMIT_S {
            em.detect(station, run_start + STATIONARY_LIMIT_S + 1, STATIONARY_BIT);
        }
    }
    (em.records, em.masks)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let stations = station_layout(cfg.n_stations, cfg.estuary_length_km)?;
    let mut kinds = vec![FishKind::Normal; cfg.n_fish];
    let n_single = (cfg.single_station_rate * cfg.n_fish as f64).round() as usize;
    let n_stationary = (cfg.stationary_rate * cfg.n_fish as f64).round() as usize;
    let mut order: Vec<usize> = (0..cfg.n_fish).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    for &i in order.iter().take(n_single) {
        kinds[i] = FishKind::SingleStation;
    }
    for &i in order.iter().skip(n_single).take(n_stationary) {
        kinds[i] = FishKind::Stationary;
    }
    let per_fish: Vec<_> = (0..cfg.n_fish)
        .into_par_iter()
        .map(|i| generate_fish(cfg, &stations, i, kinds[i]))
        .collect();
    let mut records = Vec::new();
    let mut masks = Vec::new();
    for (r, m) in per_fish {
        records.extend(r);
        masks.extend(m);
    }
    let fish_kinds = kinds
        .iter()
        .enumerate()
        .map(|(i, &k)| (format!("F{i:04}"), k))
        .collect();
    Ok(SynthData {
        records,
        stations,
        truth: GroundTruth { masks, fish_kinds },
    })
}

pub fn write_ground_truth<W: Write>(data: &SynthData, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["fish_id", "station", "timestamp", "criterion_mask"])?;
    for (r, m) in data.records.iter().zip(&data.truth.masks) {
        w.write_record([&r.fish_id, &r.station_id, &r.timestamp.to_string(), &m.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{haversine, EARTH_RADIUS_KM};
    use crate::ingest::group_tracks;
    use crate::labelling::label_all;

    fn small() -> SynthConfig {
        SynthConfig {
            n_fish: 6,
            span_days: 10.0,
            ..Default::default()
        }
    }

    #[test]
    fn stations_are_evenly_spaced() {
        let m = station_layout(16, 52.0).unwrap();
        let s = m.stations();
        let gaps: Vec<f64> = s
            .windows(2)
            .map(|w| haversine(w[0].lat, w[0].lon, w[1].lat, w[1].lon, EARTH_RADIUS_KM))
            .collect();
        for g in &gaps {
            assert!((g - 52.0 / 15.0).abs() < 0.1, "{g}");
        }
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.records, b.records);
        let c = generate(&SynthConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn clean_config_labels_everything_normal() {
        let d = generate(&small()).unwrap();
        assert_eq!(d.truth.anomaly_count(), 0);
        let l = label_all(&group_tracks(d.records), &d.stations).unwrap();
        assert_eq!(l.report.anomaly, 0);
    }

    #[test]
    fn timestamps_strictly_increase_per_fish() {
        let d = generate(&SynthConfig {
            skip_rate: 0.3,
            ..small()
        })
        .unwrap();
        for w in d.records.windows(2) {
            if w[0].fish_id == w[1].fish_id {
                assert!(w[1].timestamp > w[0].timestamp);
            }
        }
    }

    #[test]
    fn labeller_recovers_every_injected_bit() {
        let cfg = SynthConfig {
            n_fish: 10,
            span_days: 140.0,
            bursts_per_hour: 0.1,
            single_station_rate: 0.2,
            stationary_rate: 0.2,
            skip_rate: 0.2,
            seed: 11,
            ..Default::default()
        };
        let d = generate(&cfg).unwrap();
        assert!(d.truth.count_bit(SINGLE_STATION_BIT) > 0);
        assert!(d.truth.count_bit(STATIONARY_BIT) > 0);
        assert!(d.truth.count_bit(SKIPPED_STATIONS_BIT) > 0);
        let l = label_all(&group_tracks(d.records.clone()), &d.stations).unwrap();
        assert_eq!(l.masks, d.truth.masks);
    }

    #[test]
    fn rejects_invalid_configs() {
        assert!(generate(&SynthConfig {
            n_stations: 2,
            ..small()
        })
        .is_err());
        assert!(generate(&SynthConfig {
            skip_rate: 1.5,
            ..small()
        })
        .is_err());
        assert!(generate(&SynthConfig {
            stationary_rate: 0.5,
            ..small()
        })
        .is_err());
    }
}
