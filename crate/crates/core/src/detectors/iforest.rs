//! Isolation forest.
//!
//! Each tree recursively splits a random subsample on a random feature at a
//! uniformly random value until points are isolated or the height limit
//! `ceil(log2 psi)` is hit. Anomalies isolate in fewer splits, so a short
//! average path length gives a score close to 1.

use std::sync::OnceLock;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::points::Points;
use super::{labels_from_scores, quantile_linear};
use crate::error::{Error, Result};
use crate::features::Label;

pub const DEFAULT_SUBSAMPLE: usize = 256;
const EULER_GAMMA: f64 = 0.577_215_664_9;
const HARMONIC_TABLE_LEN: usize = 1_000_000;

/// `H(n)`: exact partial sums up to one million, asymptotic beyond.
pub fn harmonic(n: usize) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    if n > HARMONIC_TABLE_LEN {
        return (n as f64).ln() + EULER_GAMMA;
    }
    let table = TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(HARMONIC_TABLE_LEN + 1);
        let mut acc = 0.0;
        t.push(acc);
        for i in 1..=HARMONIC_TABLE_LEN {
            acc += 1.0 / i as f64;
            t.push(acc);
        }
        t
    });
    table[n]
}

/// Average path length of an unsuccessful binary-search-tree lookup among
/// `n` points.
pub fn average_path_length(n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let n_f = n as f64;
    2.0 * harmonic(n - 1) - 2.0 * (n_f - 1.0) / n_f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IsoNode {
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
        size: usize,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoTree {
    pub nodes: Vec<IsoNode>,
}

impl IsoTree {
    fn grow(points: &Points, mut indices: Vec<usize>, height_limit: usize, rng: &mut ChaCha8Rng) -> IsoTree {
        let mut tree = IsoTree { nodes: Vec::new() };
        tree.split(points, &mut indices, 0, height_limit, rng);
        tree
    }

    fn split(
        &mut self,
        points: &Points,
        indices: &mut [usize],
        depth: usize,
        height_limit: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        let id = self.nodes.len();
        let size = indices.len();
        self.nodes.push(IsoNode::Leaf { size });
        if size <= 1 || depth >= height_limit {
            return id;
        }
        let ranges: Vec<(usize, f64, f64)> = (0..points.dim())
            .filter_map(|j| {
                let (lo, hi) = indices.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = points.row(i)[j];
                    (lo.min(v), hi.max(v))
                });
                (hi > lo).then_some((j, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (dim, lo, hi) = ranges[rng.gen_range(0..ranges.len())];
        let value = lo + rng.gen::<f64>() * (hi - lo);
        let mut mid = 0;
        for k in 0..indices.len() {
            if points.row(indices[k])[dim] < value {
                indices.swap(k, mid);
                mid += 1;
            }
        }
        let (l, r) = indices.split_at_mut(mid);
        let left = self.split(points, l, depth + 1, height_limit, rng);
        let right = self.split(points, r, depth + 1, height_limit, rng);
        self.nodes[id] = IsoNode::Split {
            dim,
            value,
            left,
            right,
            size,
        };
        id
    }

    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut id = 0;
        let mut depth = 0.0;
        loop {
            match self.nodes[id] {
                IsoNode::Split {
                    dim,
                    value,
                    left,
                    right,
                    ..
                } => {
                    id = if x[dim] < value { left } else { right };
                    depth += 1.0;
                }
                IsoNode::Leaf { size } => return depth + average_path_length(size),
            }
        }
    }

    pub fn height(&self) -> usize {
        fn walk(t: &IsoTree, id: usize) -> usize {
            match t.nodes[id] {
                IsoNode::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
                IsoNode::Leaf { .. } => 0,
            }
        }
        walk(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoForestParams {
    pub n_estimators: usize,
    pub contamination: f64,
    pub subsample: usize,
    pub seed: u64,
}

impl Default for IsoForestParams {
    fn default() -> Self {
        IsoForestParams {
            n_estimators: 100,
            contamination: 0.001,
            subsample: DEFAULT_SUBSAMPLE,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoForestModel {
    pub trees: Vec<IsoTree>,
    /// Effective subsample size, `min(subsample, n)`.
    pub psi: usize,
    pub n_estimators: usize,
    pub contamination: f64,
    pub score_threshold: f64,
    pub dim: usize,
    pub seed: u64,
}

pub fn iforest_fit(points: &Points, params: &IsoForestParams) -> Result<IsoForestModel> {
    if points.len() < 2 {
        return Err(Error::InvalidData("isolation forest needs at least two rows".into()));
    }
    if params.n_estimators == 0 {
        return Err(Error::InvalidConfig("n_estimators must be at least 1".into()));
    }
    if !(params.contamination > 0.0 && params.contamination < 0.5) {
        return Err(Error::InvalidConfig(format!(
            "contamination must lie in (0, 0.5), got {}",
            params.contamination
        )));
    }
    if params.subsample < 2 {
        return Err(Error::InvalidConfig("subsample must be at least 2".into()));
    }
    let psi = params.subsample.min(points.len());
    let height_limit = (psi as f64).log2().ceil() as usize;
    let trees = (0..params.n_estimators)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(t as u64);
            let idx = sample(&mut rng, points.len(), psi).into_vec();
            IsoTree::grow(points, idx, height_limit, &mut rng)
        })
        .collect();
    let mut model = IsoForestModel {
        trees,
        psi,
        n_estimators: params.n_estimators,
        contamination: params.contamination,
        score_threshold: 0.0,
        dim: points.dim(),
        seed: params.seed,
    };
    let train_scores = iforest_scores(&model, points)?;
    model.score_threshold = quantile_linear(&train_scores, 1.0 - params.contamination);
    Ok(model)
}

/// Anomaly scores `2^(-E[h(x)] / c(psi))`, in `(0, 1]`.
pub fn iforest_scores(model: &IsoForestModel, points: &Points) -> Result<Vec<f64>> {
    points.check_dim(model.dim)?;
    let norm = average_path_length(model.psi);
    let n_trees = model.trees.len() as f64;
    Ok(points
        .rows()
        .map(|x| {
            let mean = model.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / n_trees;
            2f64.powf(-mean / norm)
        })
        .collect())
}

pub fn iforest_predict(model: &IsoForestModel, points: &Points) -> Result<Vec<Label>> {
    Ok(labels_from_scores(
        &iforest_scores(model, points)?,
        model.score_threshold,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Box-Muller
    fn normal<R: Rng>(rng: &mut R) -> f64 {
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    fn cluster_with_outlier(seed: u64) -> Points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<Vec<f64>> = (0..500)
            .map(|_| (0..3).map(|_| 0.5 + 0.01 * normal(&mut rng)).collect())
            .collect();
        rows.push(vec![5.0, 5.0, 5.0]);
        Points::from_vecs(&rows).unwrap()
    }

    #[test]
    fn path_length_normaliser() {
        assert_eq!(average_path_length(2), 1.0);
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(harmonic(1), 1.0);
        assert!((harmonic(4) - 25.0 / 12.0).abs() < 1e-15);
        let big = HARMONIC_TABLE_LEN + 10;
        assert!((harmonic(big) - harmonic(HARMONIC_TABLE_LEN)).abs() < 1e-4);
    }

    #[test]
    fn score_is_half_at_average_depth() {
        // a single leaf of size psi gives E[h] = c(psi)
        let model = IsoForestModel {
            trees: vec![IsoTree {
                nodes: vec![IsoNode::Leaf { size: 256 }],
            }],
            psi: 256,
            n_estimators: 1,
            contamination: 0.1,
            score_threshold: 0.5,
            dim: 1,
            seed: 0,
        };
        let s = iforest_scores(&model, &Points::new(vec![0.3], 1).unwrap()).unwrap();
        assert_eq!(s, vec![0.5]);
    }

    #[test]
    fn identical_rows_give_equal_scores() {
        let pts = Points::from_vecs(&vec![vec![1.0, 2.0]; 50]).unwrap();
        let m = iforest_fit(&pts, &IsoForestParams::default()).unwrap();
        let s = iforest_scores(&m, &pts).unwrap();
        assert!(s.iter().all(|&v| v == s[0]));
        assert_eq!(m.score_threshold, s[0]);
        assert!(iforest_predict(&m, &pts).unwrap().iter().all(|&l| l == Label::Normal));
    }

    #[test]
    fn far_outlier_flagged_across_seeds() {
        let mut hits = 0;
        for seed in 0..100 {
            let pts = cluster_with_outlier(seed);
            let m = iforest_fit(
                &pts,
                &IsoForestParams {
                    seed,
                    ..Default::default()
                },
            )
            .unwrap();
            let labels = iforest_predict(&m, &pts).unwrap();
            if labels[500] == Label::Anomaly {
                hits += 1;
            }
        }
        assert!(hits >= 95, "outlier flagged for {hits}/100 seeds");
    }

    #[test]
    fn inlier_duplicate_normal_and_far_point_anomalous() {
        for seed in 0..20 {
            let pts = cluster_with_outlier(seed);
            let m = iforest_fit(
                &pts,
                &IsoForestParams {
                    seed,
                    ..Default::default()
                },
            )
            .unwrap();
            let probe = Points::from_vecs(&[vec![0.5, 0.5, 0.5], vec![500.0, -500.0, 500.0]]).unwrap();
            let labels = iforest_predict(&m, &probe).unwrap();
            assert_eq!(labels, vec![Label::Normal, Label::Anomaly]);
        }
    }

    #[test]
    fn structure_and_determinism() {
        let pts = cluster_with_outlier(3);
        let params = IsoForestParams {
            seed: 11,
            n_estimators: 20,
            ..Default::default()
        };
        let a = iforest_fit(&pts, &params).unwrap();
        let b = iforest_fit(&pts, &params).unwrap();
        assert_eq!(a, b);
        assert!(a.trees.iter().all(|t| t.height() <= 8));
        let scores = iforest_scores(&a, &pts).unwrap();
        assert!(scores.iter().all(|&s| s > 0.0 && s <= 1.0));
        let flagged = iforest_predict(&a, &pts)
            .unwrap()
            .iter()
            .filter(|&&l| l == Label::Anomaly)
            .count();
        assert!(flagged <= 2);
        assert!(iforest_scores(&a, &Points::new(vec![0.0; 2], 2).unwrap()).is_err());
    }

    #[test]
    fn invalid_parameters() {
        let pts = cluster_with_outlier(0);
        for bad in [
            IsoForestParams {
                n_estimators: 0,
                ..Default::default()
            },
            IsoForestParams {
                contamination: 0.5,
                ..Default::default()
            },
        ] {
            assert!(iforest_fit(&pts, &bad).is_err());
        }
        assert!(iforest_fit(&Points::new(vec![1.0], 1).unwrap(), &IsoForestParams::default()).is_err());
    }
}
