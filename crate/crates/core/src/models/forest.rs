//! Random forest regression: CART trees with variance-reduction splits over
//! bootstrap resamples and per-node feature subsampling.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{fold_assignment, ModelError};
use crate::data::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfrParams {
    pub n_trees: usize,
    /// Candidate features sampled per node.
    pub max_features: usize,
    pub min_leaf: usize,
}

impl Default for RfrParams {
    fn default() -> Self {
        Self {
            n_trees: 375,
            max_features: 3,
            min_leaf: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        count: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, features: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if features[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    /// All leaf `(value, count)` pairs.
    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Leaf { value, count } => Some((*value, *count)),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub params: RfrParams,
    pub n_features: usize,
    pub per_tree_seed: Vec<u64>,
    pub target_min: f64,
    pub target_max: f64,
}

impl ForestModel {
    /// Mean of the tree outputs.
    pub fn predict(&self, features: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(features)).sum();
        sum / self.trees.len() as f64
    }
}

struct TreeBuilder<'a> {
    xs: &'a [Vec<f64>],
    ys: &'a [f64],
    params: RfrParams,
    n_features: usize,
    nodes: Vec<TreeNode>,
    pairs: Vec<(f64, f64)>, // split-scan scratch
}

impl<'a> TreeBuilder<'a> {
    fn build(&mut self, indices: &mut [u32], rng: &mut ChaCha8Rng) -> usize {
        let n = indices.len();
        let sum: f64 = indices.iter().map(|&i| self.ys[i as usize]).sum();
        let mean = sum / n as f64;
        let sse: f64 = indices
            .iter()
            .map(|&i| (self.ys[i as usize] - mean).powi(2))
            .sum();
        if n < 2 * self.params.min_leaf || sse <= 1e-12 {
            return self.leaf(mean, n);
        }

        // Sample candidate features without replacement.
        let k = self.params.max_features.min(self.n_features);
        let mut pool: Vec<usize> = (0..self.n_features).collect();
        for i in 0..k {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }

        let mut best: Option<(usize, f64, f64)> = None; // (feature, threshold, score)
        for &f in &pool[..k] {
            let mut pairs = std::mem::take(&mut self.pairs);
            pairs.clear();
            pairs.extend(
                indices
                    .iter()
                    .map(|&i| (self.xs[i as usize][f], self.ys[i as usize])),
            );
            pairs.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let mut left_sum = 0.0;
            for w in 0..n - 1 {
                let (x_here, y_here) = pairs[w];
                left_sum += y_here;
                let left_n = w + 1;
                let x_next = pairs[w + 1].0;
                if x_here == x_next {
                    continue;
                }
                let right_n = n - left_n;
                if left_n < self.params.min_leaf || right_n < self.params.min_leaf {
                    continue;
                }
                let right_sum = sum - left_sum;
                // Maximizing this is minimizing the post-split SSE.
                let score = left_sum * left_sum / left_n as f64
                    + right_sum * right_sum / right_n as f64;
                if best.map_or(true, |(_, _, s)| score > s) {
                    // The midpoint of two adjacent floats can round onto the
                    // right value; fall back to the left one so `x <= thr`
                    // separates exactly as counted.
                    let mut thr = 0.5 * (x_here + x_next);
                    if thr >= x_next {
                        thr = x_here;
                    }
                    best = Some((f, thr, score));
                }
            }
            self.pairs = pairs;
        }

        let Some((feature, threshold, _)) = best else {
            return self.leaf(mean, n);
        };
        let mid = partition(indices, |i| self.xs[i as usize][feature] <= threshold);
        let at = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { value: 0.0, count: 0 }); // placeholder
        let (left_idx, right_idx) = indices.split_at_mut(mid);
        let left = self.build(left_idx, rng);
        let right = self.build(right_idx, rng);
        self.nodes[at] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }

    fn leaf(&mut self, value: f64, count: usize) -> usize {
        self.nodes.push(TreeNode::Leaf { value, count });
        self.nodes.len() - 1
    }
}

/// Stable in-order partition: `true` samples first. Returns the split point.
fn partition(indices: &mut [u32], pred: impl Fn(u32) -> bool) -> usize {
    let mut buf: Vec<u32> = Vec::with_capacity(indices.len());
    for &i in indices.iter() {
        if pred(i) {
            buf.push(i);
        }
    }
    let mid = buf.len();
    for &i in indices.iter() {
        if !pred(i) {
            buf.push(i);
        }
    }
    indices.copy_from_slice(&buf);
    mid
}

/// Fit a forest: each tree sees a bootstrap resample (with replacement, same
/// size as the training set) and splits on `max_features` sampled candidates
/// per node. Fully determined by `seed`.
pub fn fit_rfr(ds: &Dataset, params: RfrParams, seed: u64) -> Result<ForestModel, ModelError> {
    if params.max_features > ds.n_features() || params.max_features == 0 {
        return Err(ModelError::ArityMismatch {
            expected: ds.n_features(),
            got: params.max_features,
        });
    }
    if params.min_leaf == 0 || ds.len() < 2 {
        return Err(ModelError::TooFewSamples {
            needed: 2,
            got: ds.len(),
        });
    }
    let xs: Vec<Vec<f64>> = ds.records().iter().map(|r| r.features.clone()).collect();
    let ys = ds.targets();
    let n = ys.len();

    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let per_tree_seed: Vec<u64> = (0..params.n_trees).map(|_| master.gen()).collect();

    let mut trees = Vec::with_capacity(params.n_trees);
    for &tree_seed in &per_tree_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(tree_seed);
        let mut indices: Vec<u32> = (0..n).map(|_| rng.gen_range(0..n) as u32).collect();
        let mut builder = TreeBuilder {
            xs: &xs,
            ys: &ys,
            params,
            n_features: ds.n_features(),
            nodes: Vec::new(),
            pairs: Vec::with_capacity(n),
        };
        let root = builder.build(&mut indices, &mut rng);
        debug_assert_eq!(root, 0);
        trees.push(Tree {
            nodes: builder.nodes,
        });
    }
    let target_min = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let target_max = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ForestModel {
        trees,
        params,
        n_features: ds.n_features(),
        per_tree_seed,
        target_min,
        target_max,
    })
}

/// Grid search over `(n_trees, max_features)` by k-fold CV-RMSE. Ties prefer
/// fewer trees, then fewer features.
pub fn tune_rfr(
    ds: &Dataset,
    grid: &[(usize, usize)],
    folds: usize,
    seed: u64,
) -> Result<(usize, usize), ModelError> {
    if grid.is_empty() {
        return Err(ModelError::EmptyGrid);
    }
    let assignment = fold_assignment(ds.len(), folds, seed);
    let mut fold_seeds = Vec::with_capacity(folds);
    let mut master = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f01d);
    for _ in 0..folds {
        fold_seeds.push(master.gen::<u64>());
    }

    let mut best: Option<((usize, usize), f64)> = None;
    for &(n_trees, max_features) in grid {
        let params = RfrParams {
            n_trees,
            max_features,
            ..Default::default()
        };
        let mut total = 0.0;
        for fold in 0..folds {
            let mut train_rows = Vec::new();
            let mut held = Vec::new();
            for (r, &f) in ds.records().iter().zip(&assignment) {
                if f == fold {
                    held.push(r.clone());
                } else {
                    train_rows.push((r.timestamp, r.pv, r.features.clone()));
                }
            }
            let train =
                Dataset::from_rows(ds.site(), ds.feature_names().to_vec(), train_rows)
                    .expect("fold split");
            let model = fit_rfr(&train, params, fold_seeds[fold])?;
            let mse: f64 = held
                .iter()
                .map(|r| (r.pv - model.predict(&r.features)).powi(2))
                .sum::<f64>()
                / held.len().max(1) as f64;
            total += mse.sqrt();
        }
        let score = total / folds as f64;
        let better = match best {
            None => true,
            Some((current, s)) => {
                score < s - 1e-12
                    || ((score - s).abs() <= 1e-12
                        && (n_trees, max_features) < current)
            }
        };
        if better {
            best = Some(((n_trees, max_features), score));
        }
    }
    Ok(best.unwrap().0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Location;
    use chrono::{Duration, TimeZone, Utc};
    use rand::Rng;

    fn make_ds(xs: &[Vec<f64>], ys: &[f64]) -> Dataset {
        let base = Utc.with_ymd_and_hms(2017, 6, 1, 0, 0, 0).unwrap();
        let names = (0..xs[0].len()).map(|i| format!("f{i}")).collect();
        let rows = xs
            .iter()
            .zip(ys)
            .enumerate()
            .map(|(i, (x, &y))| (base + Duration::hours(i as i64), y, x.clone()))
            .collect();
        Dataset::from_rows(Location::new(0.0, 0.0).unwrap(), names, rows).unwrap()
    }

    #[test]
    fn constant_target_predicts_constant() {
        let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
        let ys = vec![0.7; 30];
        let ds = make_ds(&xs, &ys);
        let m = fit_rfr(&ds, RfrParams { n_trees: 5, max_features: 1, min_leaf: 2 }, 1).unwrap();
        for x in &xs {
            assert!((m.predict(x) - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn single_deep_tree_memorizes_in_bag_point() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let ys: Vec<f64> = (0..10).map(|i| (i * i) as f64 / 100.0).collect();
        let ds = make_ds(&xs, &ys);
        let params = RfrParams { n_trees: 1, max_features: 1, min_leaf: 1 };
        let m = fit_rfr(&ds, params, 3).unwrap();
        // Find a training point that landed in the bootstrap bag: replay the
        // resample from the stored per-tree seed.
        let mut rng = ChaCha8Rng::seed_from_u64(m.per_tree_seed[0]);
        let bag: Vec<usize> = (0..10).map(|_| rng.gen_range(0..10)).collect();
        let probe = bag[0];
        // Distinct x values, min_leaf 1: the tree isolates every in-bag x.
        assert!((m.predict(&xs[probe]) - ys[probe]).abs() < 1e-12);
    }

    #[test]
    fn step_function_is_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let xs: Vec<Vec<f64>> = (0..500).map(|_| vec![rng.gen::<f64>()]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| if x[0] > 0.5 { 1.0 } else { 0.0 }).collect();
        let ds = make_ds(&xs, &ys);
        let m = fit_rfr(&ds, RfrParams { n_trees: 30, max_features: 1, min_leaf: 2 }, 4).unwrap();
        let test_xs: Vec<Vec<f64>> = (0..400).map(|_| vec![rng.gen::<f64>()]).collect();
        let mse: f64 = test_xs
            .iter()
            .map(|x| {
                let truth = if x[0] > 0.5 { 1.0 } else { 0.0 };
                (m.predict(x) - truth).powi(2)
            })
            .sum::<f64>()
            / test_xs.len() as f64;
        assert!(mse.sqrt() < 0.1, "rmse {}", mse.sqrt());
    }

    #[test]
    fn predictions_stay_in_target_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let xs: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()])
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0] - x[1] + 0.2 * rng.gen::<f64>()).collect();
        let ds = make_ds(&xs, &ys);
        let m = fit_rfr(&ds, RfrParams { n_trees: 20, max_features: 2, min_leaf: 3 }, 5).unwrap();
        for _ in 0..500 {
            let x = vec![rng.gen_range(-2.0..3.0), rng.gen_range(-2.0..3.0)];
            let p = m.predict(&x);
            assert!(p >= m.target_min - 1e-12 && p <= m.target_max + 1e-12);
        }
    }

    #[test]
    fn leaves_respect_min_leaf() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let xs: Vec<Vec<f64>> = (0..300).map(|_| vec![rng.gen::<f64>()]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0] + 0.1 * rng.gen::<f64>()).collect();
        let ds = make_ds(&xs, &ys);
        let m = fit_rfr(&ds, RfrParams { n_trees: 10, max_features: 1, min_leaf: 7 }, 6).unwrap();
        for tree in &m.trees {
            for (_, count) in tree.leaves() {
                assert!(count >= 7, "leaf of size {count}");
            }
        }
    }

    #[test]
    fn forest_mean_of_two_stumps() {
        let t = |v: f64| Tree { nodes: vec![TreeNode::Leaf { value: v, count: 1 }] };
        let m = ForestModel {
            trees: vec![t(0.2), t(0.4)],
            params: RfrParams::default(),
            n_features: 1,
            per_tree_seed: vec![0, 0],
            target_min: 0.0,
            target_max: 1.0,
        };
        assert!((m.predict(&[0.0]) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let xs: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.gen::<f64>()]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0]).collect();
        let ds = make_ds(&xs, &ys);
        let p = RfrParams { n_trees: 8, max_features: 1, min_leaf: 2 };
        let a = fit_rfr(&ds, p, 7).unwrap();
        let b = fit_rfr(&ds, p, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tuning_prefers_informative_grid_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let xs: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()])
            .collect();
        // Linear in all three features: allowing all of them per split wins.
        let ys: Vec<f64> = xs.iter().map(|x| x[0] + x[1] + x[2]).collect();
        let ds = make_ds(&xs, &ys);
        let grid = [(10usize, 1usize), (10, 3)];
        let best = tune_rfr(&ds, &grid, 4, 0).unwrap();
        assert_eq!(best, (10, 3));
        assert_eq!(tune_rfr(&ds, &grid, 4, 0).unwrap(), best);
    }

    #[test]
    fn singleton_grid_returned() {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let ys: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let ds = make_ds(&xs, &ys);
        assert_eq!(tune_rfr(&ds, &[(7, 1)], 4, 0).unwrap(), (7, 1));
    }
}
