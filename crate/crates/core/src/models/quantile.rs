//! Linear quantile regression fitted as a pinball-loss linear program.
//!
//! The residual of each training point is split into nonnegative parts
//! `u - v = y - ŷ` and the program minimizes `Σ τ·u + (1-τ)·v`. One simplex
//! instance is built per design matrix and re-solved across the τ grid from
//! the previous optimal basis, so sweeping 99 quantiles costs little more
//! than one cold solve. A tiny cost on the intercept breaks the flat-face tie
//! that occurs when `nτ` is integral, selecting the lower quantile vertex.

use serde::{Deserialize, Serialize};

use super::{LinearModel, ModelError};
use crate::data::Dataset;
use crate::lp::{LpProblem, LpStatus, Relation, Sense, Simplex, SolverOptions};

/// Pinball (quantile) loss of one residual `r = y - ŷ`.
pub fn pinball_loss(residual: f64, tau: f64) -> f64 {
    if residual >= 0.0 {
        tau * residual
    } else {
        (tau - 1.0) * residual
    }
}

/// One linear model per fitted quantile, sharing a feature subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileModel {
    pub taus: Vec<f64>,
    pub models: Vec<LinearModel>,
}

impl QuantileModel {
    /// The model fitted at exactly `tau`. Panics if that quantile was not
    /// fitted.
    pub fn model_at(&self, tau: f64) -> &LinearModel {
        let i = self
            .taus
            .iter()
            .position(|t| (t - tau).abs() < 1e-9)
            .unwrap_or_else(|| panic!("quantile {tau} was not fitted"));
        &self.models[i]
    }

    pub fn has_tau(&self, tau: f64) -> bool {
        self.taus.iter().any(|t| (t - tau).abs() < 1e-9)
    }

    /// Predict at the fitted quantile nearest to `tau` (ties take the lower
    /// one). Off-grid queries, like a weighted critical fractile, snap to
    /// the grid the model was fitted on.
    pub fn predict(&self, features: &[f64], tau: f64) -> f64 {
        assert!(!self.models.is_empty(), "no fitted quantiles");
        let mut best = 0usize;
        let mut best_gap = f64::INFINITY;
        for (i, t) in self.taus.iter().enumerate() {
            let gap = (t - tau).abs();
            if gap < best_gap {
                best_gap = gap;
                best = i;
            }
        }
        self.models[best].predict(features)
    }
}

/// Fit quantile lines for every `tau` over the selected feature columns.
pub fn fit_lqr(ds: &Dataset, columns: &[usize], taus: &[f64]) -> Result<QuantileModel, ModelError> {
    for &t in taus {
        if !(0.0 < t && t < 1.0) {
            return Err(ModelError::BadTau(t));
        }
    }
    let n = ds.len();
    let p = columns.len();
    if n < p + 1 {
        return Err(ModelError::TooFewSamples { needed: p + 1, got: n });
    }
    let n_coef = p + 1;
    let n_vars = n_coef + 2 * n;
    let mut problem = LpProblem::new(Sense::Minimize, n_vars);
    for j in 0..n_coef {
        problem.set_bounds(j, f64::NEG_INFINITY, f64::INFINITY);
    }
    for (i, r) in ds.records().iter().enumerate() {
        let mut row = vec![0.0; n_vars];
        row[0] = 1.0;
        for (k, &c) in columns.iter().enumerate() {
            row[1 + k] = r.features[c];
        }
        row[n_coef + i] = 1.0; // u_i
        row[n_coef + n + i] = -1.0; // v_i
        problem.add_row(row, Relation::Eq, r.pv);
    }

    let tie_break = 1e-9 * n as f64;
    let objective = |tau: f64| -> Vec<f64> {
        let mut c = vec![0.0; n_vars];
        c[0] = tie_break;
        for i in 0..n {
            c[n_coef + i] = tau;
            c[n_coef + n + i] = 1.0 - tau;
        }
        c
    };

    let mut order: Vec<usize> = (0..taus.len()).collect();
    order.sort_by(|&a, &b| taus[a].partial_cmp(&taus[b]).unwrap());

    let mut simplex: Option<Simplex> = None;
    let mut models: Vec<Option<LinearModel>> = vec![None; taus.len()];
    for &ti in &order {
        let tau = taus[ti];
        let c = objective(tau);
        let sx = match simplex.as_mut() {
            Some(sx) => {
                sx.set_objective(&c);
                sx
            }
            None => {
                problem.set_objective(&c);
                simplex = Some(Simplex::new(&problem, SolverOptions::default())?);
                simplex.as_mut().unwrap()
            }
        };
        let status = sx.solve()?;
        if status != LpStatus::Optimal {
            // The pinball program is always feasible and bounded.
            return Err(ModelError::Lp(crate::lp::LpError::Numerical(format!(
                "pinball program ended {status:?} at tau {tau}"
            ))));
        }
        let sol = sx.solution();
        models[ti] = Some(LinearModel {
            intercept: sol.values[0],
            coefficients: sol.values[1..n_coef].to_vec(),
            feature_indices: columns.to_vec(),
            feature_names: columns
                .iter()
                .map(|&c| ds.feature_names()[c].clone())
                .collect(),
        });
    }
    Ok(QuantileModel {
        taus: taus.to_vec(),
        models: models.into_iter().map(Option::unwrap).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Location;
    use chrono::{Duration, TimeZone, Utc};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn make_ds(xs: &[Vec<f64>], ys: &[f64]) -> Dataset {
        let base = Utc.with_ymd_and_hms(2017, 6, 1, 0, 0, 0).unwrap();
        let names = (0..xs.first().map_or(0, Vec::len))
            .map(|i| format!("f{i}"))
            .collect();
        let rows = xs
            .iter()
            .zip(ys)
            .enumerate()
            .map(|(i, (x, &y))| (base + Duration::hours(i as i64), y, x.clone()))
            .collect();
        Dataset::from_rows(Location::new(0.0, 0.0).unwrap(), names, rows).unwrap()
    }

    #[test]
    fn median_recovers_line_under_antisymmetric_noise() {
        // Residuals come in exact ± pairs plus two anchor points on the
        // line itself; any other affine fit strictly increases the loss, so
        // the τ=0.5 program recovers the true line.
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let line = |x: f64| 0.5 + 2.0 * x;
        for i in 0..40 {
            let x = i as f64 / 10.0;
            for sign in [-1.0, 1.0] {
                xs.push(vec![x]);
                ys.push(line(x) + sign * (0.3 + 0.05 * (i % 7) as f64));
            }
        }
        xs.push(vec![1.15]);
        ys.push(line(1.15));
        xs.push(vec![2.85]);
        ys.push(line(2.85));
        let ds = make_ds(&xs, &ys);
        let qm = fit_lqr(&ds, &[0], &[0.5]).unwrap();
        let m = qm.model_at(0.5);
        assert!((m.intercept - 0.5).abs() < 1e-6, "intercept {}", m.intercept);
        assert!((m.coefficients[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn intercept_only_tau09_matches_brute_force() {
        let xs: Vec<Vec<f64>> = vec![vec![]; 10];
        let ys: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let ds = make_ds(&xs, &ys);
        // Brute-force oracle over candidate intercepts, smallest tie wins.
        let mut best = (f64::INFINITY, f64::NAN);
        for &cand in &ys {
            let loss: f64 = ys.iter().map(|&y| pinball_loss(y - cand, 0.9)).sum();
            if loss < best.0 - 1e-12 {
                best = (loss, cand);
            }
        }
        assert_eq!(best.1, 9.0);
        let qm = fit_lqr(&ds, &[], &[0.9]).unwrap();
        assert!(
            (qm.model_at(0.9).intercept - 9.0).abs() < 1e-6,
            "intercept {}",
            qm.model_at(0.9).intercept
        );
    }

    #[test]
    fn empirical_coverage_first_order_condition() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n = 300;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen::<f64>()]).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| 0.2 + 0.6 * x[0] + 0.2 * (rng.gen::<f64>() - 0.5))
            .collect();
        let ds = make_ds(&xs, &ys);
        let taus = [0.05, 0.5, 0.95];
        let qm = fit_lqr(&ds, &[0], &taus).unwrap();
        for &tau in &taus {
            let m = qm.model_at(tau);
            let below = xs
                .iter()
                .zip(&ys)
                .filter(|(x, &y)| y < m.predict(x))
                .count() as f64
                / n as f64;
            let slack = 2.0 / n as f64;
            assert!(
                below >= tau - slack && below <= tau + slack,
                "tau {tau}: fraction below {below}"
            );
        }
    }

    #[test]
    fn sweep_reuses_one_simplex_and_stays_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let n = 150;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen::<f64>()]).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| x[0] + 0.3 * (rng.gen::<f64>() - 0.5))
            .collect();
        let ds = make_ds(&xs, &ys);
        let taus: Vec<f64> = (1..=19).map(|i| i as f64 / 20.0).collect();
        let qm = fit_lqr(&ds, &[0], &taus).unwrap();
        // At a fixed probe the fitted quantile values are non-decreasing.
        let probe = vec![0.5];
        let vals: Vec<f64> = taus.iter().map(|&t| qm.predict(&probe, t)).collect();
        for w in vals.windows(2) {
            assert!(w[1] >= w[0] - 1e-7, "crossing at {vals:?}");
        }
    }

    #[test]
    fn rejects_bad_tau() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let ys: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ds = make_ds(&xs, &ys);
        assert!(matches!(fit_lqr(&ds, &[0], &[0.0]), Err(ModelError::BadTau(_))));
        assert!(matches!(fit_lqr(&ds, &[0], &[1.0]), Err(ModelError::BadTau(_))));
    }

    #[test]
    fn pinball_loss_shape() {
        assert!((pinball_loss(1.0, 0.9) - 0.9).abs() < 1e-12);
        assert!((pinball_loss(-1.0, 0.9) - 0.1).abs() < 1e-12);
        assert_eq!(pinball_loss(0.0, 0.3), 0.0);
    }
}
