//! KNN residual index: a per-point difficulty estimate used to normalize
//! nonconformity scores. Distances are Euclidean in z-scored feature space,
//! with standardization statistics taken from the training set.

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::data::Dataset;

/// Strictly positive floor applied to the difficulty estimate.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Per-feature mean and standard deviation from a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(train: &Dataset) -> Result<Self, ModelError> {
        let n = train.len().max(1) as f64;
        let p = train.n_features();
        let mut means = vec![0.0; p];
        for r in train.records() {
            for (m, v) in means.iter_mut().zip(&r.features) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut vars = vec![0.0; p];
        for r in train.records() {
            for ((v, m), x) in vars.iter_mut().zip(&means).zip(&r.features) {
                *v += (x - m).powi(2);
            }
        }
        let mut stds = Vec::with_capacity(p);
        for (j, v) in vars.iter().enumerate() {
            let s = (v / n).sqrt();
            if s <= 0.0 {
                return Err(ModelError::ConstantFeature(
                    train.feature_names()[j].clone(),
                ));
            }
            stds.push(s);
        }
        Ok(Self { means, stds })
    }

    pub fn transform(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}

/// Standardized calibration features with their absolute residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnIndex {
    pub scaler: FeatureScaler,
    points: Vec<Vec<f64>>,
    abs_residuals: Vec<f64>,
    pub k: usize,
}

impl KnnIndex {
    /// Index the calibration set. Residuals must align with the records.
    pub fn build(
        scaler: FeatureScaler,
        calibration: &Dataset,
        residuals: &[f64],
        k: usize,
    ) -> Result<Self, ModelError> {
        let n = calibration.len();
        if residuals.len() != n {
            return Err(ModelError::ArityMismatch {
                expected: n,
                got: residuals.len(),
            });
        }
        if k == 0 || k > n {
            return Err(ModelError::BadK { k, max: n });
        }
        let points = calibration
            .records()
            .iter()
            .map(|r| scaler.transform(&r.features))
            .collect();
        Ok(Self {
            scaler,
            points,
            abs_residuals: residuals.iter().map(|r| r.abs()).collect(),
            k,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mean absolute residual of the `k` nearest calibration points, floored
    /// at [`SIGMA_FLOOR`]. A query equal to an indexed point counts itself
    /// among the neighbors.
    pub fn sigma(&self, features: &[f64]) -> f64 {
        let q = self.scaler.transform(features);
        let mut dist: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum();
                (d, i)
            })
            .collect();
        let k = self.k.min(dist.len());
        dist.select_nth_unstable_by(k - 1, |a, b| {
            a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
        });
        let mean: f64 = dist[..k]
            .iter()
            .map(|&(_, i)| self.abs_residuals[i])
            .sum::<f64>()
            / k as f64;
        mean.max(SIGMA_FLOOR)
    }
}
