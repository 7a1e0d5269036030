//! Ordinary least squares and greedy forward subset selection.

use serde::{Deserialize, Serialize};

use super::{fold_assignment, ModelError};
use crate::data::Dataset;

/// Linear model over a named subset of the feature columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Positions of the selected features in the full feature vector.
    pub feature_indices: Vec<usize>,
    pub feature_names: Vec<String>,
}

impl LinearModel {
    pub fn predict(&self, features: &[f64]) -> f64 {
        let mut y = self.intercept;
        for (&idx, &c) in self.feature_indices.iter().zip(&self.coefficients) {
            y += c * features[idx];
        }
        y
    }

    pub fn required_arity(&self) -> usize {
        self.feature_indices.iter().map(|&i| i + 1).max().unwrap_or(0)
    }

    /// `y - ŷ` over a dataset.
    pub fn residuals(&self, ds: &Dataset) -> Vec<f64> {
        ds.records()
            .iter()
            .map(|r| r.pv - self.predict(&r.features))
            .collect()
    }
}

/// A least-squares fit together with its training residuals.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub model: LinearModel,
    pub residuals: Vec<f64>,
}

/// Solve the normal equations by Gaussian elimination with partial pivoting.
/// `columns` are the selected feature indices.
pub fn fit_ols(ds: &Dataset, columns: &[usize]) -> Result<OlsFit, ModelError> {
    let n = ds.len();
    let p = columns.len();
    if n < p + 1 {
        return Err(ModelError::TooFewSamples { needed: p + 1, got: n });
    }
    let dim = p + 1;
    // Gram matrix and right-hand side of the normal equations.
    let mut gram = vec![0.0; dim * dim];
    let mut rhs = vec![0.0; dim];
    for r in ds.records() {
        let mut x = Vec::with_capacity(dim);
        x.push(1.0);
        for &c in columns {
            x.push(r.features[c]);
        }
        for i in 0..dim {
            rhs[i] += x[i] * r.pv;
            for j in 0..dim {
                gram[i * dim + j] += x[i] * x[j];
            }
        }
    }
    let scale: f64 = (0..dim)
        .map(|i| gram[i * dim + i].abs())
        .fold(0.0, f64::max)
        .max(1.0);
    let mut beta = rhs;
    // Gauss-Jordan with partial pivoting; row swaps keep the pivot for
    // column `col` at row `col`, so the reduced system is diagonal.
    for col in 0..dim {
        let mut piv = col;
        for r in col + 1..dim {
            if gram[r * dim + col].abs() > gram[piv * dim + col].abs() {
                piv = r;
            }
        }
        if gram[piv * dim + col].abs() < 1e-10 * scale {
            let name = if col == 0 {
                "intercept".to_string()
            } else {
                ds.feature_names()[columns[col - 1]].clone()
            };
            return Err(ModelError::RankDeficient(name));
        }
        if piv != col {
            for j in 0..dim {
                gram.swap(col * dim + j, piv * dim + j);
            }
            beta.swap(col, piv);
        }
        let d = gram[col * dim + col];
        for r in 0..dim {
            if r == col {
                continue;
            }
            let f = gram[r * dim + col] / d;
            if f != 0.0 {
                for j in col..dim {
                    gram[r * dim + j] -= f * gram[col * dim + j];
                }
                beta[r] -= f * beta[col];
            }
        }
    }
    let solution: Vec<f64> = (0..dim).map(|i| beta[i] / gram[i * dim + i]).collect();
    let model = LinearModel {
        intercept: solution[0],
        coefficients: solution[1..].to_vec(),
        feature_indices: columns.to_vec(),
        feature_names: columns
            .iter()
            .map(|&c| ds.feature_names()[c].clone())
            .collect(),
    };
    let residuals = model.residuals(ds);
    Ok(OlsFit { model, residuals })
}

fn rmse(errors: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for e in errors {
        sum += e * e;
        n += 1;
    }
    (sum / n.max(1) as f64).sqrt()
}

fn subset_datasets(ds: &Dataset, keep: &[bool]) -> (Dataset, Dataset) {
    // Split by a boolean mask into (kept, complement).
    let site = ds.site();
    let names = ds.feature_names().to_vec();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (r, &k) in ds.records().iter().zip(keep) {
        if k {
            a.push((r.timestamp, r.pv, r.features.clone()));
        } else {
            b.push((r.timestamp, r.pv, r.features.clone()));
        }
    }
    (
        Dataset::from_rows(site, names.clone(), a).expect("mask split"),
        Dataset::from_rows(site, names, b).expect("mask split"),
    )
}

/// Mean cross-validated RMSE of an OLS fit on the given columns. Folds that
/// fail to fit (rank deficiency on a slice) disqualify the candidate.
fn cv_rmse(ds: &Dataset, columns: &[usize], assignment: &[usize], folds: usize) -> f64 {
    let mut total = 0.0;
    for fold in 0..folds {
        let keep: Vec<bool> = assignment.iter().map(|&f| f != fold).collect();
        let (train, held) = subset_datasets(ds, &keep);
        if held.is_empty() || train.len() < columns.len() + 1 {
            return f64::INFINITY;
        }
        let fit = match fit_ols(&train, columns) {
            Ok(f) => f,
            Err(_) => return f64::INFINITY,
        };
        total += rmse(
            held.records()
                .iter()
                .map(|r| r.pv - fit.model.predict(&r.features)),
        );
    }
    total / folds as f64
}

/// Greedy forward selection: add the feature giving the lowest mean CV-RMSE,
/// stop when nothing improves or `max_features` is reached. Deterministic for
/// a seed; equal scores keep the lowest feature index.
pub fn forward_subset_select(
    ds: &Dataset,
    folds: usize,
    max_features: usize,
    seed: u64,
) -> Result<Vec<usize>, ModelError> {
    if folds < 2 {
        return Err(ModelError::TooFewSamples { needed: 2, got: folds });
    }
    if ds.len() < folds {
        return Err(ModelError::TooFewSamples {
            needed: folds,
            got: ds.len(),
        });
    }
    let assignment = fold_assignment(ds.len(), folds, seed);
    let mut selected: Vec<usize> = Vec::new();
    let mut best = cv_rmse(ds, &selected, &assignment, folds);
    while selected.len() < max_features.min(ds.n_features()) {
        let mut best_candidate: Option<(usize, f64)> = None;
        for f in 0..ds.n_features() {
            if selected.contains(&f) {
                continue;
            }
            let mut candidate = selected.clone();
            candidate.push(f);
            let score = cv_rmse(ds, &candidate, &assignment, folds);
            if best_candidate.map_or(true, |(_, s)| score < s) {
                best_candidate = Some((f, score));
            }
        }
        match best_candidate {
            Some((f, score)) if score < best => {
                selected.push(f);
                best = score;
            }
            _ => break,
        }
    }
    Ok(selected)
}
