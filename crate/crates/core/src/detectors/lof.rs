//! Local outlier factor in novelty mode.
//!
//! The k-distance neighbourhood of a point contains every other point no
//! farther than its k-th nearest neighbour, so ties at the k-th distance are
//! all included. New points are scored against the fitted training set.

use serde::{Deserialize, Serialize};

use super::points::{KdTree, Neighbour, Points};
use super::{labels_from_scores, quantile_linear};
use crate::error::{Error, Result};
use crate::features::Label;

/// Upper bound on local reachability density. Duplicated points have zero
/// reachability distance, which would make the density infinite.
pub const LRD_CAP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LofModel {
    pub k: usize,
    pub contamination: f64,
    pub train: Points,
    pub k_distance: Vec<f64>,
    pub lrd: Vec<f64>,
    pub train_scores: Vec<f64>,
    pub score_threshold: f64,
}

fn local_density(neighbours: &[Neighbour], k_distance: &[f64]) -> f64 {
    let mean = neighbours.iter().map(|n| k_distance[n.index].max(n.dist)).sum::<f64>() / neighbours.len() as f64;
    if mean > 0.0 {
        (1.0 / mean).min(LRD_CAP)
    } else {
        LRD_CAP
    }
}

fn factor(neighbours: &[Neighbour], lrd: &[f64], own: f64) -> f64 {
    neighbours.iter().map(|n| lrd[n.index] / own).sum::<f64>() / neighbours.len() as f64
}

pub fn lof_fit(train: Points, k: usize, contamination: f64) -> Result<LofModel> {
    if k == 0 || train.len() <= k {
        return Err(Error::InvalidConfig(format!(
            "LOF needs 1 <= k < training size; got k = {k} with {} rows",
            train.len()
        )));
    }
    if !(contamination > 0.0 && contamination <= 0.5) {
        return Err(Error::InvalidConfig(format!(
            "contamination must lie in (0, 0.5], got {contamination}"
        )));
    }
    let (k_distance, neighbourhoods) = {
        let tree = KdTree::new(&train);
        let mut k_distance = Vec::with_capacity(train.len());
        let mut neighbourhoods = Vec::with_capacity(train.len());
        for (i, x) in train.rows().enumerate() {
            let kd = tree.knn(x, k, Some(i))[k - 1].dist;
            k_distance.push(kd);
            neighbourhoods.push(tree.within(x, kd, Some(i)));
        }
        (k_distance, neighbourhoods)
    };
    let lrd: Vec<f64> = neighbourhoods.iter().map(|nb| local_density(nb, &k_distance)).collect();
    let train_scores: Vec<f64> = neighbourhoods
        .iter()
        .zip(&lrd)
        .map(|(nb, &own)| factor(nb, &lrd, own))
        .collect();
    let score_threshold = quantile_linear(&train_scores, 1.0 - contamination);
    Ok(LofModel {
        k,
        contamination,
        train,
        k_distance,
        lrd,
        train_scores,
        score_threshold,
    })
}

/// LOF of each query point with respect to the training set.
pub fn lof_scores(model: &LofModel, points: &Points) -> Result<Vec<f64>> {
    points.check_dim(model.train.dim())?;
    let tree = KdTree::new(&model.train);
    Ok(points
        .rows()
        .map(|x| {
            let kd = tree.knn(x, model.k, None)[model.k - 1].dist;
            let nb = tree.within(x, kd, None);
            let own = local_density(&nb, &model.k_distance);
            factor(&nb, &model.lrd, own)
        })
        .collect())
}

pub fn lof_predict(model: &LofModel, points: &Points) -> Result<Vec<Label>> {
    Ok(labels_from_scores(&lof_scores(model, points)?, model.score_threshold))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_interior_is_close_to_one() {
        let mut rows = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                rows.push(vec![i as f64, j as f64]);
            }
        }
        let m = lof_fit(Points::from_vecs(&rows).unwrap(), 5, 0.01).unwrap();
        // point (5, 5)
        assert!((m.train_scores[55] - 1.0).abs() <= 0.2, "{}", m.train_scores[55]);
    }

    #[test]
    fn outlier_has_maximal_score() {
        let mut rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i % 7) as f64 * 0.1, (i / 7) as f64 * 0.1])
            .collect();
        rows.push(vec![9.0, 9.0]);
        let m = lof_fit(Points::from_vecs(&rows).unwrap(), 5, 0.05).unwrap();
        let max = m.train_scores.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(m.train_scores[40], max);
        let probe = Points::from_vecs(&[vec![0.3, 0.2], vec![20.0, -20.0]]).unwrap();
        assert_eq!(lof_predict(&m, &probe).unwrap(), vec![Label::Normal, Label::Anomaly]);
    }

    #[test]
    fn duplicates_stay_finite() {
        let mut rows = vec![vec![1.0, 1.0]; 8];
        rows.push(vec![2.0, 2.0]);
        let m = lof_fit(Points::from_vecs(&rows).unwrap(), 3, 0.1).unwrap();
        assert!(m.lrd.iter().all(|v| v.is_finite()));
        assert_eq!(m.lrd[0], LRD_CAP);
        assert!(m.train_scores.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_bad_k() {
        let p = Points::from_vecs(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(lof_fit(p.clone(), 2, 0.1).is_err());
        assert!(lof_fit(p, 0, 0.1).is_err());
    }
}
