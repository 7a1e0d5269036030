//! Split conformal prediction on top of a point model.
//!
//! Five method variants are supported, differing in three switches:
//!
//! | method | normalized (KNN) | Mondrian bins | CPS (signed scores) |
//! |--------|------------------|---------------|---------------------|
//! | M1     | no               | no            | no                  |
//! | M2     | yes              | no            | no                  |
//! | M3     | yes              | yes           | no                  |
//! | M4     | yes              | no            | yes                 |
//! | M5     | yes              | yes           | yes                 |
//!
//! Plain CP uses absolute calibration residuals and symmetric intervals
//! `ŷ ± q̂·σ`. CPS keeps the signed residuals and yields a conformal
//! predictive distribution (a step CDF over candidate outcomes), so its
//! intervals need not be centered on the point prediction. The calibration
//! quantile is the `⌈(n+1)(1−α)⌉`-th smallest score, which keeps the
//! finite-sample coverage guarantee.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::models::{FeatureScaler, KnnIndex, ModelError, PointModel, QuantileModel};

#[derive(Debug, Error)]
pub enum ConformalError {
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("score list is empty")]
    EmptyScores,
    #[error("alpha {0} outside (0, 1)")]
    BadAlpha(f64),
    #[error("{n} calibration points cannot fill {bins} Mondrian bins; reduce n_bins")]
    EmptyBin { bins: usize, n: usize },
    #[error("predictor was not calibrated as a CPS; no predictive distribution")]
    NotCps,
    #[error("normalized scores need a feature scaler fitted on the training set")]
    MissingScaler,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The named method variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    M1,
    M2,
    M3,
    M4,
    M5,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::M1, Method::M2, Method::M3, Method::M4, Method::M5];

    pub fn name(self) -> &'static str {
        match self {
            Method::M1 => "M1",
            Method::M2 => "M2",
            Method::M3 => "M3",
            Method::M4 => "M4",
            Method::M5 => "M5",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Switches and hyperparameters for calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalConfig {
    /// Divide scores by a KNN difficulty estimate.
    pub normalized: bool,
    /// Calibrate per equally-populated bin of the predicted value.
    pub mondrian: bool,
    /// Signed residual scores producing a predictive distribution.
    pub cps: bool,
    /// KNN neighbor count.
    pub k: usize,
    /// Mondrian bin count.
    pub n_bins: usize,
}

impl Default for ConformalConfig {
    fn default() -> Self {
        Self {
            normalized: false,
            mondrian: false,
            cps: false,
            k: 50,
            n_bins: 15,
        }
    }
}

impl ConformalConfig {
    pub fn for_method(method: Method) -> Self {
        let (normalized, mondrian, cps) = match method {
            Method::M1 => (false, false, false),
            Method::M2 => (true, false, false),
            Method::M3 => (true, true, false),
            Method::M4 => (true, false, true),
            Method::M5 => (true, true, true),
        };
        Self {
            normalized,
            mondrian,
            cps,
            ..Default::default()
        }
    }

    /// The named method this configuration corresponds to, if any.
    pub fn method(&self) -> Option<Method> {
        Method::ALL.into_iter().find(|&m| {
            let c = ConformalConfig::for_method(m);
            (c.normalized, c.mondrian, c.cps) == (self.normalized, self.mondrian, self.cps)
        })
    }
}

/// Calibration-score quantile: the `⌈(n+1)(1−α)⌉`-th smallest score, or the
/// maximum score when that rank exceeds `n`. At most a fraction `α` of the
/// calibration scores strictly exceeds the result.
pub fn qhat(sorted_scores: &[f64], alpha: f64) -> Result<f64, ConformalError> {
    if sorted_scores.is_empty() {
        return Err(ConformalError::EmptyScores);
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(ConformalError::BadAlpha(alpha));
    }
    let n = sorted_scores.len();
    let rank = ((n + 1) as f64 * (1.0 - alpha) - 1e-9).ceil() as usize;
    let rank = rank.clamp(1, n);
    Ok(sorted_scores[rank - 1])
}

/// Ascending cut points yielding equally-populated calibration bins, with
/// the per-bin sorted score lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MondrianBinning {
    pub edges: Vec<f64>,
    pub bins: Vec<Vec<f64>>,
}

impl MondrianBinning {
    /// Partition by rank of the predicted value; bin populations differ by
    /// at most one. `items` are `(prediction, score)` pairs.
    fn build(mut items: Vec<(f64, f64)>, n_bins: usize) -> Result<Self, ConformalError> {
        let n = items.len();
        if n_bins == 0 || n < n_bins {
            return Err(ConformalError::EmptyBin { bins: n_bins, n });
        }
        items.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let base = n / n_bins;
        let rem = n % n_bins;
        let mut bins = Vec::with_capacity(n_bins);
        let mut edges = Vec::with_capacity(n_bins - 1);
        let mut at = 0usize;
        for b in 0..n_bins {
            let size = base + usize::from(b < rem);
            let chunk = &items[at..at + size];
            let mut scores: Vec<f64> = chunk.iter().map(|&(_, s)| s).collect();
            scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
            bins.push(scores);
            at += size;
            if b + 1 < n_bins {
                let left = items[at - 1].0;
                let right = items[at].0;
                edges.push(0.5 * (left + right));
            }
        }
        Ok(Self { edges, bins })
    }

    /// Bin index for a prediction: the count of edges strictly below it, so
    /// edge ties fall into the lower bin and out-of-range predictions land
    /// in the nearest extreme bin.
    pub fn bin_for(&self, prediction: f64) -> usize {
        self.edges.partition_point(|&e| e < prediction)
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum ScoreStore {
    Global(Vec<f64>),
    Binned(MondrianBinning),
}

/// A calibrated conformal predictor wrapping a point model.
///
/// The full state (configuration, calibration scores, bin edges, KNN index
/// and the point model itself) serializes to a JSON artifact and round-trips
/// exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalPredictor {
    config: ConformalConfig,
    model: PointModel,
    knn: Option<KnnIndex>,
    scores: ScoreStore,
}

impl ConformalPredictor {
    /// Score the calibration set with `model` and build the predictor.
    ///
    /// Scores are signed residuals for CPS and absolute residuals otherwise,
    /// divided by the KNN difficulty estimate when `config.normalized`; the
    /// scaler (fitted on the training set) is required in that case.
    pub fn calibrate(
        model: PointModel,
        calibration: &Dataset,
        config: ConformalConfig,
        scaler: Option<&FeatureScaler>,
    ) -> Result<Self, ConformalError> {
        if calibration.is_empty() {
            return Err(ConformalError::EmptyCalibration);
        }
        let predictions = model.predict_dataset(calibration)?;
        let residuals: Vec<f64> = calibration
            .records()
            .iter()
            .zip(&predictions)
            .map(|(r, yhat)| r.pv - yhat)
            .collect();

        let knn = if config.normalized {
            let scaler = scaler.ok_or(ConformalError::MissingScaler)?;
            Some(KnnIndex::build(
                scaler.clone(),
                calibration,
                &residuals,
                config.k,
            )?)
        } else {
            None
        };

        let mut scores = Vec::with_capacity(residuals.len());
        for (r, rec) in residuals.iter().zip(calibration.records()) {
            let sigma = knn.as_ref().map_or(1.0, |k| k.sigma(&rec.features));
            let raw = if config.cps { *r } else { r.abs() };
            scores.push(raw / sigma);
        }

        let store = if config.mondrian {
            let items: Vec<(f64, f64)> = predictions.into_iter().zip(scores).collect();
            ScoreStore::Binned(MondrianBinning::build(items, config.n_bins)?)
        } else {
            scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ScoreStore::Global(scores)
        };
        Ok(Self {
            config,
            model,
            knn,
            scores: store,
        })
    }

    pub fn config(&self) -> &ConformalConfig {
        &self.config
    }

    pub fn model(&self) -> &PointModel {
        &self.model
    }

    pub fn binning(&self) -> Option<&MondrianBinning> {
        match &self.scores {
            ScoreStore::Binned(b) => Some(b),
            ScoreStore::Global(_) => None,
        }
    }

    fn scores_for(&self, prediction: f64) -> &[f64] {
        match &self.scores {
            ScoreStore::Global(s) => s,
            ScoreStore::Binned(b) => &b.bins[b.bin_for(prediction)],
        }
    }

    fn sigma(&self, features: &[f64]) -> f64 {
        self.knn.as_ref().map_or(1.0, |k| k.sigma(features))
    }

    /// Prediction interval at error rate `alpha`.
    pub fn interval_at(
        &self,
        features: &[f64],
        alpha: f64,
    ) -> Result<ConformalInterval, ConformalError> {
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(ConformalError::BadAlpha(alpha));
        }
        let yhat = self.model.predict(features);
        if self.config.cps {
            let cpd = self.cpd_at(features)?;
            Ok(ConformalInterval {
                lower: cpd.quantile(alpha / 2.0),
                upper: cpd.quantile(1.0 - alpha / 2.0),
                alpha,
            })
        } else {
            let sigma = self.sigma(features);
            let q = qhat(self.scores_for(yhat), alpha)?;
            Ok(ConformalInterval {
                lower: yhat - q * sigma,
                upper: yhat + q * sigma,
                alpha,
            })
        }
    }

    /// Conformal predictive distribution at a test point (CPS only).
    pub fn cpd_at(&self, features: &[f64]) -> Result<Cpd, ConformalError> {
        if !self.config.cps {
            return Err(ConformalError::NotCps);
        }
        let yhat = self.model.predict(features);
        let sigma = self.sigma(features);
        let scores = self.scores_for(yhat);
        if scores.is_empty() {
            return Err(ConformalError::EmptyScores);
        }
        Ok(Cpd {
            candidates: scores.iter().map(|s| yhat + sigma * s).collect(),
        })
    }

    /// Quantile of the predictive law. For CPS this reads the CPD; for plain
    /// CP the τ-quantile maps to an interval bound: the lower bound of the
    /// `α = 2τ` interval below the median, the point prediction at τ = 0.5,
    /// and the upper bound of the `α = 2(1−τ)` interval above it.
    pub fn quantile_at(&self, features: &[f64], tau: f64) -> f64 {
        assert!(0.0 < tau && tau < 1.0, "tau {tau} outside (0, 1)");
        let yhat = self.model.predict(features);
        let sigma = self.sigma(features);
        self.quantile_from_parts(yhat, sigma, self.scores_for(yhat), tau)
    }
}

/// Interval with its error rate. Bounds are unclamped; the bidding layer
/// clamps to [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalInterval {
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
}

impl ConformalInterval {
    pub fn covers(&self, y: f64) -> bool {
        self.lower <= y && y <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Conformal predictive distribution: a step CDF over ascending candidate
/// outcomes `ŷ + σ·s(i)`, with `F(y) = #{candidates ≤ y} / (n + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cpd {
    pub candidates: Vec<f64>,
}

impl Cpd {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        let below = self.candidates.partition_point(|&c| c <= y);
        below as f64 / (self.candidates.len() + 1) as f64
    }

    /// The `⌈(n+1)τ⌉`-th candidate, clamped to the extremes.
    pub fn quantile(&self, tau: f64) -> f64 {
        assert!(0.0 < tau && tau < 1.0, "tau {tau} outside (0, 1)");
        let n = self.candidates.len();
        let rank = (((n + 1) as f64 * tau) - 1e-9).ceil() as usize;
        self.candidates[rank.clamp(1, n) - 1]
    }
}

/// Common quantile interface over conformal predictors, benchmark quantile
/// regressions and raw point models.
pub trait UncertaintyModel {
    /// The underlying point prediction.
    fn point(&self, features: &[f64]) -> f64;
    /// τ-quantile of the predictive law.
    fn quantile(&self, features: &[f64], tau: f64) -> f64;
    /// Central interval at error rate `alpha`.
    fn interval(&self, features: &[f64], alpha: f64) -> (f64, f64) {
        (
            self.quantile(features, alpha / 2.0),
            self.quantile(features, 1.0 - alpha / 2.0),
        )
    }
    /// Many quantiles of one point. Implementations that pay per-point setup
    /// costs (tree walks, neighbor searches) override this to pay them once.
    fn quantiles(&self, features: &[f64], taus: &[f64]) -> Vec<f64> {
        taus.iter().map(|&t| self.quantile(features, t)).collect()
    }
}

impl ConformalPredictor {
    fn quantile_from_parts(&self, yhat: f64, sigma: f64, scores: &[f64], tau: f64) -> f64 {
        if self.config.cps {
            let n = scores.len();
            let rank = (((n + 1) as f64 * tau) - 1e-9).ceil() as usize;
            return yhat + sigma * scores[rank.clamp(1, n) - 1];
        }
        if tau == 0.5 {
            return yhat;
        }
        if tau < 0.5 {
            let q = qhat(scores, 2.0 * tau).expect("calibrated scores");
            yhat - q * sigma
        } else {
            let q = qhat(scores, 2.0 * (1.0 - tau)).expect("calibrated scores");
            yhat + q * sigma
        }
    }
}

impl UncertaintyModel for ConformalPredictor {
    fn point(&self, features: &[f64]) -> f64 {
        self.model.predict(features)
    }

    fn quantile(&self, features: &[f64], tau: f64) -> f64 {
        self.quantile_at(features, tau)
    }

    fn interval(&self, features: &[f64], alpha: f64) -> (f64, f64) {
        let iv = self
            .interval_at(features, alpha)
            .expect("calibrated predictor");
        (iv.lower, iv.upper)
    }

    fn quantiles(&self, features: &[f64], taus: &[f64]) -> Vec<f64> {
        let yhat = self.model.predict(features);
        let sigma = self.sigma(features);
        let scores = self.scores_for(yhat);
        taus.iter()
            .map(|&tau| {
                assert!(0.0 < tau && tau < 1.0, "tau {tau} outside (0, 1)");
                self.quantile_from_parts(yhat, sigma, scores, tau)
            })
            .collect()
    }
}

/// Benchmark quantile regressions answer quantile queries directly from the
/// fitted τ grid. Crossing fits are reported as-is by `quantile`; `interval`
/// orders the two bounds.
impl UncertaintyModel for QuantileModel {
    fn point(&self, features: &[f64]) -> f64 {
        self.predict(features, 0.5)
    }

    fn quantile(&self, features: &[f64], tau: f64) -> f64 {
        self.predict(features, tau)
    }

    fn interval(&self, features: &[f64], alpha: f64) -> (f64, f64) {
        let a = self.predict(features, alpha / 2.0);
        let b = self.predict(features, 1.0 - alpha / 2.0);
        (a.min(b), a.max(b))
    }
}
