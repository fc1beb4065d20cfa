//! Regridding of irregular normal detections.
//!
//! For each day the shortest non-zero gap between consecutive detections is
//! found; the minimum over all days gives the finest sampling interval.
//! Because that interval is usually too fine to train on, coarser candidate
//! gaps are tried in ascending order until the projected number of grid
//! points fits the budget. Each fish-day is then laid onto a grid with that
//! spacing.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    time_encodings, FeatureRow, Label, DAY_OF_YEAR, DISTANCE_KM, FEATURE_DIM, HOUR_COS, HOUR_SIN, LAT, LON,
};
use crate::ingest::local_day;

pub const DEFAULT_MAX_POINTS: usize = 5_000_000;

/// Ids of generated grid rows start here so they never collide with
/// detection row ids.
pub const RESAMPLED_ID_BASE: u64 = 1 << 62;

/// Linearly interpolated between bracketing detections.
const CONTINUOUS: [usize; 3] = [LAT, LON, DISTANCE_KM];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResamplePlan {
    /// Grid spacing in seconds.
    pub delta_t: i64,
    /// Sampling rate in Hz.
    pub f_s: f64,
    pub candidate_gaps: Vec<i64>,
    pub max_points: usize,
    /// Projected number of grid points, `span / delta_t`; 0 for fixed plans.
    pub projected_points: f64,
    /// Number of fish-days having each shortest non-zero gap.
    #[serde(default)]
    pub day_gap_histogram: BTreeMap<i64, usize>,
}

impl ResamplePlan {
    /// A plan at a fixed operating interval, bypassing the search.
    pub fn fixed(delta_t: i64) -> Result<ResamplePlan> {
        if delta_t <= 0 {
            return Err(Error::InvalidConfig(format!(
                "resample interval must be positive, got {delta_t}"
            )));
        }
        Ok(ResamplePlan {
            delta_t,
            f_s: 1.0 / delta_t as f64,
            candidate_gaps: vec![delta_t],
            max_points: usize::MAX,
            projected_points: 0.0,
            day_gap_histogram: BTreeMap::new(),
        })
    }
}

/// Shortest non-zero gap between consecutive sorted timestamps, or `None`
/// when fewer than two detections or every gap is zero.
pub fn daily_min_gap(sorted_timestamps: &[i64]) -> Option<i64> {
    sorted_timestamps
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&g| g > 0)
        .min()
}

/// Minimum of the per-day gaps and the corresponding sampling rate.
pub fn global_rate(per_day_gaps: &[i64]) -> Result<(i64, f64)> {
    let dt = *per_day_gaps.iter().min().ok_or(Error::EmptyInput("per-day gaps"))?;
    Ok((dt, 1.0 / dt as f64))
}

/// Smallest candidate gap whose projected point count `span / gap` fits in
/// `max_points`; the largest candidate (with a warning) if none does.
pub fn tradeoff_search(candidate_gaps: &[i64], max_points: usize, span: i64) -> Result<ResamplePlan> {
    let largest = *candidate_gaps.last().ok_or(Error::EmptyInput("candidate gaps"))?;
    let projected = |g: i64| span as f64 / g as f64;
    let delta_t = match candidate_gaps
        .iter()
        .copied()
        .find(|&g| projected(g) <= max_points as f64)
    {
        Some(g) => g,
        None => {
            warn!(
                "no candidate gap fits {max_points} points; using the largest gap {largest} s ({:.0} points)",
                projected(largest)
            );
            largest
        }
    };
    Ok(ResamplePlan {
        delta_t,
        f_s: 1.0 / delta_t as f64,
        candidate_gaps: candidate_gaps.to_vec(),
        max_points,
        projected_points: projected(delta_t),
        day_gap_histogram: BTreeMap::new(),
    })
}

/// Normal rows grouped by fish and local day, each group sorted by time.
fn fish_days(rows: &[FeatureRow]) -> Result<Vec<Vec<&FeatureRow>>> {
    let mut groups: BTreeMap<(&str, i64), Vec<&FeatureRow>> = BTreeMap::new();
    for r in rows {
        if !r.is_normal() {
            return Err(Error::InvalidData(format!(
                "row {} is not labelled normal; only normal rows are resampled",
                r.id
            )));
        }
        groups
            .entry((r.fish_id.as_str(), local_day(r.timestamp)))
            .or_default()
            .push(r);
    }
    Ok(groups
        .into_values()
        .map(|mut g| {
            g.sort_by_key(|r| r.timestamp);
            g
        })
        .collect())
}

/// Searches for a grid spacing over normal rows.
pub fn plan(rows: &[FeatureRow], max_points: usize) -> Result<ResamplePlan> {
    let groups = fish_days(rows)?;
    let mut candidates = BTreeSet::new();
    let mut histogram = BTreeMap::new();
    let mut span = 0i64;
    let mut day_gaps = Vec::new();
    for g in &groups {
        let ts: Vec<i64> = g.iter().map(|r| r.timestamp).collect();
        span += ts[ts.len() - 1] - ts[0];
        candidates.extend(ts.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > 0));
        match daily_min_gap(&ts) {
            Some(gap) => {
                day_gaps.push(gap);
                *histogram.entry(gap).or_insert(0) += 1;
            }
            None => log::debug!("skipping fish-day with {} detection(s) and no non-zero gap", ts.len()),
        }
    }
    let (finest, _) = global_rate(&day_gaps)?;
    let candidates: Vec<i64> = candidates.into_iter().collect();
    debug_assert_eq!(candidates.first(), Some(&finest));
    let mut plan = tradeoff_search(&candidates, max_points, span)?;
    plan.day_gap_histogram = histogram;
    Ok(plan)
}

/// Regrids normal rows per fish and day. Output is ordered by fish id then
/// timestamp. Single-detection days pass through unchanged.
pub fn resample(rows: &[FeatureRow], plan: &ResamplePlan) -> Result<Vec<FeatureRow>> {
    if plan.delta_t <= 0 {
        return Err(Error::InvalidConfig("resample interval must be positive".into()));
    }
    let dt = plan.delta_t;
    let mut out = Vec::new();
    let mut next_id = RESAMPLED_ID_BASE;
    for group in fish_days(rows)? {
        if group.len() == 1 {
            out.push(group[0].clone());
            continue;
        }
        let (first, last) = (group[0].timestamp, group[group.len() - 1].timestamp);
        let mut grid: Vec<i64> = (0..).map(|k| first + k * dt).take_while(|&t| t <= last).collect();
        if *grid.last().expect("grid starts at first detection") < last {
            grid.push(last);
        }
        let mut j = 0;
        for t in grid {
            while j + 1 < group.len() && group[j + 1].timestamp <= t {
                j += 1;
            }
            let prev = group[j];
            let next = if prev.timestamp == t || j + 1 == group.len() {
                prev
            } else {
                group[j + 1]
            };
            let mut values: [f64; FEATURE_DIM] = prev.values;
            if next.timestamp > prev.timestamp {
                let w = (t - prev.timestamp) as f64 / (next.timestamp - prev.timestamp) as f64;
                for &c in &CONTINUOUS {
                    values[c] = prev.values[c] + w * (next.values[c] - prev.values[c]);
                }
            }
            let [s, c, doy] = time_encodings(t);
            values[HOUR_SIN] = s;
            values[HOUR_COS] = c;
            values[DAY_OF_YEAR] = doy;
            out.push(FeatureRow {
                id: next_id,
                fish_id: prev.fish_id.clone(),
                timestamp: t,
                values,
                label: Some(Label::Normal),
            });
            next_id += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn daily_gap_examples() {
        assert_eq!(daily_min_gap(&[0, 10, 25, 27, 60]), Some(2));
        assert_eq!(daily_min_gap(&[0, 5, 5, 9]), Some(4));
        assert_eq!(daily_min_gap(&[7]), None);
        assert_eq!(daily_min_gap(&[7, 7]), None);
    }

    #[test]
    fn global_rate_examples() {
        assert_eq!(global_rate(&[2, 5, 90]).unwrap(), (2, 0.5));
        let (dt, fs) = global_rate(&[65]).unwrap();
        assert_eq!(dt, 65);
        assert_eq!(fs, 1.0 / 65.0);
        assert_eq!(global_rate(&[30, 30, 30]).unwrap().0, 30);
        assert!(global_rate(&[]).is_err());
    }

    #[test]
    fn tradeoff_examples() {
        let p = tradeoff_search(&[2, 65, 90], 2000, 86_400).unwrap();
        assert_eq!(p.delta_t, 65);
        assert_eq!(tradeoff_search(&[2, 65, 90], usize::MAX, 86_400).unwrap().delta_t, 2);
        assert_eq!(tradeoff_search(&[2, 65, 90], 10, 86_400).unwrap().delta_t, 90);
        assert!(tradeoff_search(&[], 10, 86_400).is_err());
        assert_eq!(ResamplePlan::fixed(90).unwrap().delta_t, 90);
        assert_eq!(ResamplePlan::fixed(65).unwrap().f_s, 1.0 / 65.0);
    }

    fn row(id: u64, ts: i64, lat: f64, duration: f64) -> FeatureRow {
        let mut values = [0.0; FEATURE_DIM];
        values[LAT] = lat;
        values[LON] = 20.0;
        values[crate::features::DURATION_SAME_STATION] = duration;
        FeatureRow {
            id,
            fish_id: "F".into(),
            timestamp: ts,
            values,
            label: Some(Label::Normal),
        }
    }

    // 10:00 local on some day, well away from midnight
    const T0: i64 = 1_484_467_200;

    #[test]
    fn two_detections_130s_apart() {
        let rows = vec![row(0, T0, -34.0, 5.0), row(1, T0 + 130, -34.2, 9.0)];
        let out = resample(&rows, &ResamplePlan::fixed(65).unwrap()).unwrap();
        let ts: Vec<_> = out.iter().map(|r| r.timestamp - T0).collect();
        assert_eq!(ts, vec![0, 65, 130]);
        assert!((out[1].values[LAT] - (-34.1)).abs() < 1e-12);
        // step-wise dimensions hold the most recent detection
        assert_eq!(out[1].values[crate::features::DURATION_SAME_STATION], 5.0);
        assert_eq!(out[2].values[crate::features::DURATION_SAME_STATION], 9.0);
        assert!(out.iter().all(|r| r.id >= RESAMPLED_ID_BASE));
    }

    #[test]
    fn trailing_remainder_and_passthrough() {
        let rows = vec![
            row(0, T0, -34.0, 0.0),
            row(1, T0 + 140, -34.0, 0.0),
            row(2, T0 + 3 * 86_400, -34.5, 1.0),
        ];
        let out = resample(&rows, &ResamplePlan::fixed(65).unwrap()).unwrap();
        let ts: Vec<_> = out.iter().map(|r| r.timestamp - T0).collect();
        assert_eq!(ts, vec![0, 65, 130, 140, 3 * 86_400]);
        assert_eq!(out[4], rows[2]);
    }

    #[test]
    fn anomalies_are_rejected() {
        let mut r = row(0, T0, -34.0, 0.0);
        r.label = Some(Label::Anomaly);
        assert!(resample(&[r.clone()], &ResamplePlan::fixed(65).unwrap()).is_err());
        assert!(plan(&[r], 100).is_err());
    }

    #[test]
    fn plan_uses_span_over_fish_days() {
        let rows = vec![
            row(0, T0, -34.0, 0.0),
            row(1, T0 + 10, -34.0, 0.0),
            row(2, T0 + 100, -34.0, 0.0),
            row(3, T0 + 1000, -34.0, 0.0),
        ];
        // span 1000 s, gaps {10, 90, 900}
        let p = plan(&rows, 20).unwrap();
        assert_eq!(p.candidate_gaps, vec![10, 90, 900]);
        assert_eq!(p.delta_t, 90);
        assert_eq!(p.day_gap_histogram, BTreeMap::from([(10, 1)]));
    }
}
