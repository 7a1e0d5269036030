//! K-means clustering of imbalance price deltas.
//!
//! Clusters of `(Δup, Δdown)` act as RTM price scenarios, weighted by their
//! member counts. After clustering, clusters with `Δup + Δdown < 0` are
//! merged into their nearest valid neighbor (weighted mean, weights summed)
//! so every surviving scenario admits a well-defined critical fractile and a
//! tight deficit/surplus linearization.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MarketError, PriceSeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaCluster {
    /// Mean `rtm_up − dam` over members.
    pub delta_up: f64,
    /// Mean `dam − rtm_down` over members.
    pub delta_down: f64,
    /// Member count (fractional after reduction).
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaClusterSet {
    clusters: Vec<DeltaCluster>,
    total_weight: f64,
}

impl DeltaClusterSet {
    pub fn from_clusters(clusters: Vec<DeltaCluster>) -> Self {
        let total_weight = clusters.iter().map(|c| c.weight).sum();
        Self {
            clusters,
            total_weight,
        }
    }

    /// One cluster, handy for fixtures.
    pub fn single(delta_up: f64, delta_down: f64, weight: f64) -> Self {
        Self::from_clusters(vec![DeltaCluster {
            delta_up,
            delta_down,
            weight,
        }])
    }

    pub fn clusters(&self) -> &[DeltaCluster] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// Re-cluster the centroids themselves down to `c` clusters (weighted
    /// k-means). Used to shrink the scenario set for the joint CVaR program.
    pub fn reduce(&self, c: usize, seed: u64) -> Result<DeltaClusterSet, MarketError> {
        if self.len() <= c {
            return Ok(self.clone());
        }
        let points: Vec<(f64, f64, f64)> = self
            .clusters
            .iter()
            .map(|cl| (cl.delta_up, cl.delta_down, cl.weight))
            .collect();
        let clusters = weighted_kmeans(&points, c, seed)?;
        validate_clusters(clusters)
    }
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

/// Weighted k-means++ / Lloyd on `(x, y, weight)` points. Converges when no
/// centroid moves more than 1e-8, or after 300 rounds.
fn weighted_kmeans(
    points: &[(f64, f64, f64)],
    c: usize,
    seed: u64,
) -> Result<Vec<DeltaCluster>, MarketError> {
    let mut distinct: Vec<(f64, f64)> = points.iter().map(|&(x, y, _)| (x, y)).collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < c {
        return Err(MarketError::TooFewDeltaPoints {
            needed: c,
            got: distinct.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // k-means++ seeding over weighted points.
    let total_w: f64 = points.iter().map(|p| p.2).sum();
    let mut centroids: Vec<(f64, f64)> = Vec::with_capacity(c);
    let first = {
        let mut target = rng.gen::<f64>() * total_w;
        let mut pick = 0usize;
        for (i, p) in points.iter().enumerate() {
            target -= p.2;
            if target <= 0.0 {
                pick = i;
                break;
            }
        }
        (points[pick].0, points[pick].1)
    };
    centroids.push(first);
    while centroids.len() < c {
        let d2: Vec<f64> = points
            .iter()
            .map(|&(x, y, w)| {
                let best = centroids
                    .iter()
                    .map(|&cc| dist2((x, y), cc))
                    .fold(f64::INFINITY, f64::min);
                w * best
            })
            .collect();
        let sum: f64 = d2.iter().sum();
        if sum <= 0.0 {
            // All remaining mass sits on the chosen centroids; take any
            // distinct point not yet chosen.
            let next = distinct
                .iter()
                .find(|p| !centroids.contains(p))
                .copied()
                .expect("distinct count checked above");
            centroids.push(next);
            continue;
        }
        let mut target = rng.gen::<f64>() * sum;
        let mut pick = points.len() - 1;
        for (i, &v) in d2.iter().enumerate() {
            target -= v;
            if target <= 0.0 {
                pick = i;
                break;
            }
        }
        centroids.push((points[pick].0, points[pick].1));
    }

    let mut assignment = vec![0usize; points.len()];
    for _round in 0..300 {
        for (i, &(x, y, _)) in points.iter().enumerate() {
            let mut best = (f64::INFINITY, 0usize);
            for (k, &cc) in centroids.iter().enumerate() {
                let d = dist2((x, y), cc);
                if d < best.0 {
                    best = (d, k);
                }
            }
            assignment[i] = best.1;
        }
        let mut sums = vec![(0.0, 0.0, 0.0); c];
        for (&(x, y, w), &k) in points.iter().zip(&assignment) {
            sums[k].0 += w * x;
            sums[k].1 += w * y;
            sums[k].2 += w;
        }
        let mut moved: f64 = 0.0;
        for k in 0..c {
            if sums[k].2 > 0.0 {
                let nc = (sums[k].0 / sums[k].2, sums[k].1 / sums[k].2);
                moved = moved.max(dist2(nc, centroids[k]).sqrt());
                centroids[k] = nc;
            } else {
                // Empty cluster: restart it at the point farthest from its
                // current centroid assignment.
                let far = points
                    .iter()
                    .enumerate()
                    .max_by(|(i, a), (j, b)| {
                        let da = dist2((a.0, a.1), centroids[assignment[*i]]);
                        let db = dist2((b.0, b.1), centroids[assignment[*j]]);
                        da.partial_cmp(&db).unwrap().then(j.cmp(i))
                    })
                    .map(|(_, &(x, y, _))| (x, y))
                    .unwrap();
                moved = f64::INFINITY;
                centroids[k] = far;
            }
        }
        if moved < 1e-8 {
            break;
        }
    }

    // Final assignment and weighted means.
    let mut sums = vec![(0.0, 0.0, 0.0); c];
    for &(x, y, w) in points {
        let mut best = (f64::INFINITY, 0usize);
        for (k, &cc) in centroids.iter().enumerate() {
            let d = dist2((x, y), cc);
            if d < best.0 {
                best = (d, k);
            }
        }
        let k = best.1;
        sums[k].0 += w * x;
        sums[k].1 += w * y;
        sums[k].2 += w;
    }
    Ok(sums
        .into_iter()
        .filter(|s| s.2 > 0.0)
        .map(|(sx, sy, sw)| DeltaCluster {
            delta_up: sx / sw,
            delta_down: sy / sw,
            weight: sw,
        })
        .collect())
}

/// Merge clusters violating `Δup + Δdown ≥ 0` into their nearest valid
/// neighbor until every cluster is valid.
fn validate_clusters(mut clusters: Vec<DeltaCluster>) -> Result<DeltaClusterSet, MarketError> {
    loop {
        let invalid = clusters
            .iter()
            .enumerate()
            .filter(|(_, c)| c.delta_up + c.delta_down < 0.0)
            .min_by(|(i, a), (j, b)| {
                let sa = a.delta_up + a.delta_down;
                let sb = b.delta_up + b.delta_down;
                sa.partial_cmp(&sb).unwrap().then(i.cmp(j))
            })
            .map(|(i, _)| i);
        let Some(bad) = invalid else {
            return Ok(DeltaClusterSet::from_clusters(clusters));
        };
        let target = clusters
            .iter()
            .enumerate()
            .filter(|(i, c)| *i != bad && c.delta_up + c.delta_down >= 0.0)
            .min_by(|(i, a), (j, b)| {
                let da = dist2(
                    (a.delta_up, a.delta_down),
                    (clusters[bad].delta_up, clusters[bad].delta_down),
                );
                let db = dist2(
                    (b.delta_up, b.delta_down),
                    (clusters[bad].delta_up, clusters[bad].delta_down),
                );
                da.partial_cmp(&db).unwrap().then(i.cmp(j))
            })
            .map(|(i, _)| i);
        let Some(tgt) = target else {
            return Err(MarketError::NoValidCluster);
        };
        let (a, b) = (clusters[bad], clusters[tgt]);
        let w = a.weight + b.weight;
        let merged = DeltaCluster {
            delta_up: (a.weight * a.delta_up + b.weight * b.delta_up) / w,
            delta_down: (a.weight * a.delta_down + b.weight * b.delta_down) / w,
            weight: w,
        };
        clusters[tgt] = merged;
        clusters.remove(bad);
    }
}

/// Cluster the calibration-period price deltas into `c` scenarios.
pub fn cluster_deltas(
    prices: &PriceSeries,
    c: usize,
    seed: u64,
) -> Result<DeltaClusterSet, MarketError> {
    let deltas = prices.deltas();
    let points: Vec<(f64, f64, f64)> = deltas.iter().map(|&(u, d)| (u, d, 1.0)).collect();
    let clusters = weighted_kmeans(&points, c, seed)?;
    validate_clusters(clusters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone, Utc};

    fn series_from_deltas(deltas: &[(f64, f64)]) -> PriceSeries {
        let base = Utc.with_ymd_and_hms(2016, 1, 1, 0, 0, 0).unwrap();
        PriceSeries::from_rows(
            deltas
                .iter()
                .enumerate()
                .map(|(i, &(u, d))| {
                    let dam = 40.0;
                    (base + Duration::hours(i as i64), dam, dam + u, dam - d)
                })
                .collect(),
        )
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let deltas: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0 * i as f64)).collect();
        let prices = series_from_deltas(&deltas);
        let set = cluster_deltas(&prices, 1, 0).unwrap();
        assert_eq!(set.len(), 1);
        let c = set.clusters()[0];
        assert!((c.delta_up - 4.5).abs() < 1e-9);
        assert!((c.delta_down - 9.0).abs() < 1e-9);
        assert_eq!(c.weight, 10.0);
        assert_eq!(set.total_weight(), 10.0);
    }

    #[test]
    fn two_separated_blobs_are_recovered() {
        let mut deltas = Vec::new();
        for i in 0..50 {
            let eps = (i % 5) as f64 * 0.01;
            deltas.push((5.0 + eps, 3.0 - eps));
            deltas.push((60.0 - eps, 40.0 + eps));
        }
        let prices = series_from_deltas(&deltas);
        let set = cluster_deltas(&prices, 2, 1).unwrap();
        assert_eq!(set.len(), 2);
        let mut ups: Vec<f64> = set.clusters().iter().map(|c| c.delta_up).collect();
        ups.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((ups[0] - 5.02).abs() < 1e-3);
        assert!((ups[1] - 59.98).abs() < 1e-3);
        assert!(set.clusters().iter().all(|c| c.weight == 50.0));
    }

    #[test]
    fn same_seed_same_clustering() {
        let deltas: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let x = (i as f64 * 0.7).sin() * 20.0 + 25.0;
                let y = (i as f64 * 1.3).cos() * 15.0 + 20.0;
                (x, y)
            })
            .collect();
        let prices = series_from_deltas(&deltas);
        let a = cluster_deltas(&prices, 8, 99).unwrap();
        let b = cluster_deltas(&prices, 8, 99).unwrap();
        assert_eq!(a, b);
        assert!((a.total_weight() - 200.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_distinct_points_rejected() {
        let deltas = vec![(1.0, 2.0); 30];
        let prices = series_from_deltas(&deltas);
        assert!(matches!(
            cluster_deltas(&prices, 3, 0),
            Err(MarketError::TooFewDeltaPoints { needed: 3, got: 1 })
        ));
    }

    #[test]
    fn invalid_clusters_merge_into_valid_neighbors() {
        // One tight invalid blob (sum < 0) and two valid ones.
        let mut deltas = Vec::new();
        for _ in 0..20 {
            deltas.push((-10.0, 2.0)); // sum -8: invalid
            deltas.push((5.0, 4.0));
            deltas.push((50.0, 30.0));
        }
        let prices = series_from_deltas(&deltas);
        let set = cluster_deltas(&prices, 3, 5).unwrap();
        assert!(set
            .clusters()
            .iter()
            .all(|c| c.delta_up + c.delta_down >= 0.0));
        // Weight is conserved through merging.
        assert!((set.total_weight() - 60.0).abs() < 1e-9);
    }

    #[test]
    fn all_invalid_is_an_error() {
        let deltas = vec![(-5.0, 1.0), (-8.0, 2.0), (-3.0, 0.5), (-9.0, 1.5)];
        let prices = series_from_deltas(&deltas);
        assert!(matches!(
            cluster_deltas(&prices, 2, 0),
            Err(MarketError::NoValidCluster)
        ));
    }

    #[test]
    fn reduce_shrinks_cluster_count() {
        let deltas: Vec<(f64, f64)> = (0..100)
            .map(|i| ((i % 17) as f64 + 3.0, (i % 11) as f64 + 2.0))
            .collect();
        let prices = series_from_deltas(&deltas);
        let set = cluster_deltas(&prices, 20, 7).unwrap();
        let small = set.reduce(4, 7).unwrap();
        assert!(small.len() <= 4);
        assert!((small.total_weight() - set.total_weight()).abs() < 1e-6);
    }
}
