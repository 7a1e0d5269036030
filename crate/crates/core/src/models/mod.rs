//! Point-prediction and benchmark quantile models.

mod forest;
mod knn;
mod linear;
mod quantile;

pub use forest::{fit_rfr, tune_rfr, ForestModel, RfrParams, Tree, TreeNode};
pub use knn::{FeatureScaler, KnnIndex, SIGMA_FLOOR};
pub use linear::{fit_ols, forward_subset_select, LinearModel, OlsFit};
pub use quantile::{fit_lqr, pinball_loss, QuantileModel};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::lp::LpError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("design matrix is rank deficient at column `{0}`")]
    RankDeficient(String),
    #[error("feature arity mismatch: model wants {expected}, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("feature `{0}` not present in dataset")]
    UnknownFeature(String),
    #[error("feature `{0}` is constant; cannot standardize")]
    ConstantFeature(String),
    #[error("not enough samples: need {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("k = {k} outside [1, {max}]")]
    BadK { k: usize, max: usize },
    #[error("quantile {0} outside (0, 1)")]
    BadTau(f64),
    #[error("empty parameter grid")]
    EmptyGrid,
    #[error("quantile program failed: {0}")]
    Lp(#[from] LpError),
    #[error("model artifact: {0}")]
    Artifact(String),
}

/// A fitted point-prediction model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PointModel {
    Linear(LinearModel),
    Forest(ForestModel),
}

impl PointModel {
    /// Predict from a full feature vector. Panics on arity mismatch; use
    /// [`PointModel::predict_dataset`] for checked batch prediction.
    pub fn predict(&self, features: &[f64]) -> f64 {
        match self {
            PointModel::Linear(m) => m.predict(features),
            PointModel::Forest(m) => m.predict(features),
        }
    }

    pub fn required_arity(&self) -> usize {
        match self {
            PointModel::Linear(m) => m.required_arity(),
            PointModel::Forest(m) => m.n_features,
        }
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<f64>, ModelError> {
        let expected = self.required_arity();
        if ds.n_features() < expected {
            return Err(ModelError::ArityMismatch {
                expected,
                got: ds.n_features(),
            });
        }
        Ok(ds.records().iter().map(|r| self.predict(&r.features)).collect())
    }
}

const ARTIFACT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    format_version: u32,
    payload: T,
}

/// Serialize a model (or predictor state) as a versioned JSON artifact.
/// Floating-point values round-trip exactly.
pub fn to_artifact_json<T: Serialize>(payload: &T) -> String {
    serde_json::to_string_pretty(&Versioned {
        format_version: ARTIFACT_VERSION,
        payload,
    })
    .expect("artifact serialization")
}

pub fn from_artifact_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, ModelError> {
    let v: Versioned<T> =
        serde_json::from_str(text).map_err(|e| ModelError::Artifact(e.to_string()))?;
    if v.format_version != ARTIFACT_VERSION {
        return Err(ModelError::Artifact(format!(
            "unsupported format_version {}",
            v.format_version
        )));
    }
    Ok(v.payload)
}

/// Deterministic k-fold assignment: a seeded shuffle chunked into `folds`
/// nearly equal parts. Returns fold id per sample index.
pub(crate) fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assignment = vec![0usize; n];
    for (pos, &idx) in order.iter().enumerate() {
        assignment[idx] = pos % folds;
    }
    assignment
}
