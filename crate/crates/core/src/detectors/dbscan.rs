//! Density-based clustering with a nearest-core rule for unseen points.
//!
//! A point is core when at least `min_pts` points (itself included) lie
//! within `eps`. Clusters grow from core points in index order; a border
//! point joins the first cluster that reaches it. Training points left
//! unassigned are noise. An unseen point is normal iff some core point lies
//! within `eps` of it.

use serde::{Deserialize, Serialize};

use super::points::{KdTree, Points};
use crate::error::{Error, Result};
use crate::features::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbscanModel {
    pub eps: f64,
    pub min_pts: usize,
    pub core_points: Points,
    /// Cluster id per training point; `None` for noise.
    pub assignments: Vec<Option<usize>>,
    pub n_clusters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<Option<usize>>,
    pub core: Vec<bool>,
    pub n_clusters: usize,
}

pub fn cluster(points: &Points, eps: f64, min_pts: usize) -> Result<Clustering> {
    if eps.is_nan() || eps <= 0.0 || min_pts == 0 {
        return Err(Error::InvalidConfig(format!(
            "DBSCAN needs eps > 0 and min_pts >= 1; got eps = {eps}, min_pts = {min_pts}"
        )));
    }
    let tree = KdTree::new(points);
    let core: Vec<bool> = points
        .rows()
        .map(|x| tree.count_within(x, eps, min_pts) >= min_pts)
        .collect();
    let mut assignments: Vec<Option<usize>> = vec![None; points.len()];
    let mut n_clusters = 0;
    let mut frontier = Vec::new();
    for seed in 0..points.len() {
        if !core[seed] || assignments[seed].is_some() {
            continue;
        }
        let id = n_clusters;
        n_clusters += 1;
        assignments[seed] = Some(id);
        frontier.push(seed);
        while let Some(p) = frontier.pop() {
            for n in tree.within(points.row(p), eps, None) {
                if assignments[n.index].is_none() {
                    assignments[n.index] = Some(id);
                    if core[n.index] {
                        frontier.push(n.index);
                    }
                }
            }
        }
    }
    Ok(Clustering {
        assignments,
        core,
        n_clusters,
    })
}

pub fn dbscan_fit(points: &Points, eps: f64, min_pts: usize) -> Result<DbscanModel> {
    let c = cluster(points, eps, min_pts)?;
    let core_idx: Vec<usize> = (0..points.len()).filter(|&i| c.core[i]).collect();
    Ok(DbscanModel {
        eps,
        min_pts,
        core_points: points.select(&core_idx),
        assignments: c.assignments,
        n_clusters: c.n_clusters,
    })
}

impl DbscanModel {
    /// Training labels: noise is anomalous.
    pub fn training_labels(&self) -> Vec<Label> {
        self.assignments
            .iter()
            .map(|a| if a.is_some() { Label::Normal } else { Label::Anomaly })
            .collect()
    }
}

/// Distance to the nearest core point (infinite when there are none).
pub fn dbscan_scores(model: &DbscanModel, points: &Points) -> Result<Vec<f64>> {
    if model.core_points.is_empty() {
        return Ok(vec![f64::INFINITY; points.len()]);
    }
    points.check_dim(model.core_points.dim())?;
    let tree = KdTree::new(&model.core_points);
    Ok(points
        .rows()
        .map(|x| tree.nearest(x).map_or(f64::INFINITY, |n| n.dist))
        .collect())
}

pub fn dbscan_predict(model: &DbscanModel, points: &Points) -> Result<Vec<Label>> {
    if model.core_points.is_empty() {
        return Ok(vec![Label::Anomaly; points.len()]);
    }
    points.check_dim(model.core_points.dim())?;
    let tree = KdTree::new(&model.core_points);
    Ok(points
        .rows()
        .map(|x| {
            if tree.count_within(x, model.eps, 1) > 0 {
                Label::Normal
            } else {
                Label::Anomaly
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> Points {
        let mut rows = Vec::new();
        for c in [0.0, 10.0] {
            for i in 0..50 {
                rows.push(vec![c + (i % 10) as f64 * 0.01, c + (i / 10) as f64 * 0.01]);
            }
        }
        Points::from_vecs(&rows).unwrap()
    }

    #[test]
    fn two_blobs_two_clusters() {
        let c = cluster(&blobs(), 0.05, 4).unwrap();
        assert_eq!(c.n_clusters, 2);
        assert!(c.assignments.iter().all(Option::is_some));
        assert_ne!(c.assignments[0], c.assignments[99]);
    }

    #[test]
    fn isolated_point_is_noise() {
        let mut rows: Vec<Vec<f64>> = blobs().rows().map(<[f64]>::to_vec).collect();
        rows.push(vec![5.0, 5.0]);
        let m = dbscan_fit(&Points::from_vecs(&rows).unwrap(), 0.5, 4).unwrap();
        assert_eq!(m.training_labels()[100], Label::Anomaly);
        let probe = Points::from_vecs(&[vec![0.02, 0.02], vec![5.0, 5.0]]).unwrap();
        assert_eq!(dbscan_predict(&m, &probe).unwrap(), vec![Label::Normal, Label::Anomaly]);
        let s = dbscan_scores(&m, &probe).unwrap();
        assert!(s[0] < s[1]);
    }

    #[test]
    fn no_core_points_means_everything_is_anomalous() {
        let m = dbscan_fit(&blobs(), 1e-6, 3).unwrap();
        assert_eq!(m.n_clusters, 0);
        assert!(dbscan_predict(&m, &blobs())
            .unwrap()
            .iter()
            .all(|&l| l == Label::Anomaly));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(cluster(&blobs(), 0.0, 3).is_err());
        assert!(cluster(&blobs(), 1.0, 0).is_err());
    }
}
