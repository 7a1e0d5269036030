//! Scoring of point predictions and interval/CPD predictors.
//!
//! The interval score at error rate `α` for an interval `[l, u]` and outcome
//! `y` is `(u−l) + (2/α)·(l−y)⁺ + (2/α)·(y−u)⁺`: its mean over a test set
//! decomposes into sharpness (mean width) plus a calibration penalty. The
//! weighted interval score (WIS) averages interval scores over the error-rate
//! grid 0.02, 0.04, …, 0.98 with weights `α/2`, normalized to sum to one.

use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

use crate::conformal::UncertaintyModel;
use crate::data::Dataset;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need more than {0} samples for {1} predictors")]
    TooFewSamples(usize, usize),
    #[error("target variance is zero; R² undefined")]
    ZeroVariance,
    #[error("test set is empty")]
    EmptyTest,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// `1 − (1−R²)(n−1)/(n−p−1)`.
pub fn adjusted_r2(y: &[f64], yhat: &[f64], p: usize) -> Result<f64, EvalError> {
    let n = y.len();
    if n <= p + 1 {
        return Err(EvalError::TooFewSamples(n, p));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if ss_tot <= 0.0 {
        return Err(EvalError::ZeroVariance);
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    Ok(1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - p as f64 - 1.0))
}

/// Interval score of one observation.
pub fn interval_score(lower: f64, upper: f64, y: f64, alpha: f64) -> f64 {
    debug_assert!(lower <= upper, "inverted interval");
    debug_assert!(0.0 < alpha && alpha < 1.0);
    let width = upper - lower;
    let below = (lower - y).max(0.0);
    let above = (y - upper).max(0.0);
    width + (2.0 / alpha) * (below + above)
}

/// Mean interval-score decomposition at one error rate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IntervalScoreReport {
    pub alpha: f64,
    /// Mean interval width.
    pub sharpness: f64,
    /// Mean out-of-interval penalty.
    pub calibration_penalty: f64,
    /// `sharpness + calibration_penalty`.
    pub interval_score: f64,
}

/// WIS over the fixed α grid with its weighted decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WisReport {
    pub wis: f64,
    pub sharpness: f64,
    pub calibration: f64,
    pub per_alpha: Vec<IntervalScoreReport>,
}

/// Error rates 0.02, 0.04, …, 0.98.
pub fn wis_alpha_grid() -> Vec<f64> {
    (1..=49).map(|k| 2.0 * k as f64 / 100.0).collect()
}

/// Score a predictor's intervals over the α grid. For CPS and plain CP the
/// interval at `α` equals the (α/2, 1−α/2) quantile pair, which is also how
/// quantile-regression benchmarks are scored.
pub fn wis<P: UncertaintyModel + ?Sized>(predictor: &P, test: &Dataset) -> Result<WisReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    let n = test.len() as f64;
    let grid = wis_alpha_grid();
    // Both interval bounds for every alpha, one batched quantile query per
    // test point.
    let taus: Vec<f64> = grid
        .iter()
        .flat_map(|&a| [a / 2.0, 1.0 - a / 2.0])
        .collect();
    let mut sharp_sum = vec![0.0; grid.len()];
    let mut cal_sum = vec![0.0; grid.len()];
    for r in test.records() {
        let qs = predictor.quantiles(&r.features, &taus);
        for (k, &alpha) in grid.iter().enumerate() {
            let (a, b) = (qs[2 * k], qs[2 * k + 1]);
            let (lo, hi) = (a.min(b), a.max(b));
            sharp_sum[k] += hi - lo;
            cal_sum[k] += (2.0 / alpha) * ((lo - r.pv).max(0.0) + (r.pv - hi).max(0.0));
        }
    }
    let mut per_alpha = Vec::with_capacity(grid.len());
    let mut weighted_sharp = 0.0;
    let mut weighted_cal = 0.0;
    let mut weight_total = 0.0;
    for (k, &alpha) in grid.iter().enumerate() {
        let sharp = sharp_sum[k] / n;
        let cal = cal_sum[k] / n;
        per_alpha.push(IntervalScoreReport {
            alpha,
            sharpness: sharp,
            calibration_penalty: cal,
            interval_score: sharp + cal,
        });
        let w = alpha / 2.0;
        weighted_sharp += w * sharp;
        weighted_cal += w * cal;
        weight_total += w;
    }
    let sharpness = weighted_sharp / weight_total;
    let calibration = weighted_cal / weight_total;
    Ok(WisReport {
        wis: sharpness + calibration,
        sharpness,
        calibration,
        per_alpha,
    })
}

/// Fraction of test outcomes inside the predictor's `α` interval.
pub fn coverage<P: UncertaintyModel + ?Sized>(
    predictor: &P,
    test: &Dataset,
    alpha: f64,
) -> Result<f64, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTest);
    }
    let hits = test
        .records()
        .iter()
        .filter(|r| {
            let (lo, hi) = predictor.interval(&r.features, alpha);
            lo <= r.pv && r.pv <= hi
        })
        .count();
    Ok(hits as f64 / test.len() as f64)
}

/// One row of the uncertainty-method comparison report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WisSummaryRow {
    pub method: String,
    pub version: String,
    pub wis: f64,
    pub sharpness: f64,
    pub calibration: f64,
}

pub fn write_wis_csv<W: Write>(rows: &[WisSummaryRow], w: W) -> Result<(), EvalError> {
    let mut writer = csv::Writer::from_writer(w);
    writer.write_record(["method", "version", "wis", "sharpness", "calibration"])?;
    for r in rows {
        writer.write_record(&[
            r.method.clone(),
            r.version.clone(),
            format!("{:.6}", r.wis),
            format!("{:.6}", r.sharpness),
            format!("{:.6}", r.calibration),
        ])?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Location;
    use chrono::{Duration, TimeZone, Utc};

    /// Fixed-quantile stub: quantile(τ) = center + spread·(τ − 0.5).
    struct Stub {
        center: f64,
        spread: f64,
    }

    impl UncertaintyModel for Stub {
        fn point(&self, _: &[f64]) -> f64 {
            self.center
        }
        fn quantile(&self, _: &[f64], tau: f64) -> f64 {
            self.center + self.spread * (tau - 0.5)
        }
    }

    fn tiny_test(ys: &[f64]) -> Dataset {
        let base = Utc.with_ymd_and_hms(2017, 6, 1, 0, 0, 0).unwrap();
        let rows = ys
            .iter()
            .enumerate()
            .map(|(i, &y)| (base + Duration::hours(i as i64), y, vec![0.0]))
            .collect();
        Dataset::from_rows(Location::new(0.0, 0.0).unwrap(), vec!["x".into()], rows).unwrap()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let y = [0.1, 0.4, 0.8, 0.3];
        assert_eq!(adjusted_r2(&y, &y, 1).unwrap(), 1.0);
    }

    #[test]
    fn mean_prediction_scores_zero() {
        let y = [0.1, 0.4, 0.8, 0.3];
        let mean = y.iter().sum::<f64>() / 4.0;
        let yhat = [mean; 4];
        let r = adjusted_r2(&y, &yhat, 0).unwrap();
        assert!(r.abs() < 1e-12);
    }

    #[test]
    fn zero_variance_is_an_error() {
        let y = [0.5; 5];
        assert!(matches!(
            adjusted_r2(&y, &y, 0),
            Err(EvalError::ZeroVariance)
        ));
    }

    #[test]
    fn interval_score_substitutions() {
        assert_eq!(interval_score(0.3, 0.3, 0.3, 0.2), 0.0);
        // Covered: width only.
        assert!((interval_score(0.0, 1.0, 0.5, 0.2) - 1.0).abs() < 1e-12);
        // 0.2 above the upper bound at alpha 0.2: 1 + 10 * 0.2 = 3.
        assert!((interval_score(0.0, 1.0, 1.2, 0.2) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn interval_score_at_least_width() {
        for (l, u, y) in [(0.0, 0.4, 0.2), (0.1, 0.3, 0.9), (-0.5, 0.5, -0.8)] {
            for alpha in [0.05, 0.3, 0.9] {
                let s = interval_score(l, u, y, alpha);
                assert!(s >= u - l - 1e-12);
                if l <= y && y <= u {
                    assert!((s - (u - l)).abs() < 1e-12);
                } else {
                    assert!(s > u - l);
                }
            }
        }
    }

    #[test]
    fn degenerate_predictor_has_zero_wis() {
        let test = tiny_test(&[0.5, 0.5, 0.5]);
        let stub = Stub {
            center: 0.5,
            spread: 0.0,
        };
        let report = wis(&stub, &test).unwrap();
        assert_eq!(report.wis, 0.0);
        assert_eq!(report.sharpness, 0.0);
        assert_eq!(report.calibration, 0.0);
    }

    #[test]
    fn wis_matches_hand_computation_on_single_point() {
        // Stub intervals at alpha: width = spread * (1 - alpha); the single
        // test point sits at the center, so no penalty: the weighted mean of
        // widths is computable by hand.
        let test = tiny_test(&[0.5]);
        let stub = Stub {
            center: 0.5,
            spread: 0.2,
        };
        let report = wis(&stub, &test).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for alpha in wis_alpha_grid() {
            let w = alpha / 2.0;
            num += w * 0.2 * (1.0 - alpha);
            den += w;
        }
        assert!((report.wis - num / den).abs() < 1e-12);
        assert_eq!(report.calibration, 0.0);
    }

    #[test]
    fn wis_decomposition_is_exact() {
        let test = tiny_test(&[0.9, 0.1, 0.45]);
        let stub = Stub {
            center: 0.4,
            spread: 0.3,
        };
        let report = wis(&stub, &test).unwrap();
        assert_eq!(report.wis, report.sharpness + report.calibration);
        for pa in &report.per_alpha {
            assert_eq!(pa.interval_score, pa.sharpness + pa.calibration_penalty);
        }
        assert_eq!(report.per_alpha.len(), 49);
        assert!((report.per_alpha[0].alpha - 0.02).abs() < 1e-12);
        assert!((report.per_alpha[48].alpha - 0.98).abs() < 1e-12);
    }

    #[test]
    fn coverage_extremes() {
        let test = tiny_test(&[0.2, 0.5, 0.7]);
        let wide = Stub {
            center: 0.5,
            spread: 10.0,
        };
        assert_eq!(coverage(&wide, &test, 0.1).unwrap(), 1.0);
        let empty = Stub {
            center: -5.0,
            spread: 0.0,
        };
        assert_eq!(coverage(&empty, &test, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn csv_report_shape() {
        let rows = vec![WisSummaryRow {
            method: "M1".into(),
            version: "RFR".into(),
            wis: 0.1525,
            sharpness: 0.04,
            calibration: 0.1125,
        }];
        let mut buf = Vec::new();
        write_wis_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("method,version,wis,sharpness,calibration\n"));
        assert!(text.contains("M1,RFR,0.152500"));
    }
}
