use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of price clusters.
pub const DEFAULT_CLUSTERS: usize = 5;
/// Independent k-means++ initializations; the lowest inertia wins.
pub const KMEANS_RESTARTS: usize = 100;
const MAX_LLOYD_ITERATIONS: usize = 500;

/// One-dimensional k-means fit on prices. Label 1 is the most expensive
/// cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    /// Strictly decreasing centroids; `centroids[l - 1]` belongs to label `l`.
    pub centroids: Vec<f64>,
    pub inertia: f64,
    pub seed: u64,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Label of the nearest centroid; ties go to the more expensive cluster.
    pub fn assign(&self, price: f64) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, c) in self.centroids.iter().enumerate() {
            let d = (price - c).abs();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1 + 1
    }

    pub fn labels(&self, prices: &[f64]) -> Vec<usize> {
        prices.iter().map(|&p| self.assign(p)).collect()
    }
}

fn nearest(centroids: &[f64], x: f64) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = (x - c) * (x - c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus_init(points: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut dist: Vec<f64> = points.iter().map(|&x| (x - centroids[0]).powi(2)).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, d) in dist.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            points[pick]
        } else {
            points[rng.random_range(0..points.len())]
        };
        centroids.push(next);
        for (d, &x) in dist.iter_mut().zip(points) {
            *d = d.min((x - next).powi(2));
        }
    }
    centroids
}

fn lloyd(points: &[f64], mut centroids: Vec<f64>) -> (Vec<f64>, f64) {
    let k = centroids.len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut changed = false;
        for (l, &x) in labels.iter_mut().zip(points) {
            let (c, _) = nearest(&centroids, x);
            if *l != c {
                *l = c;
                changed = true;
            }
        }
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&l, &x) in labels.iter().zip(points) {
            sums[l] += x;
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c] / counts[c] as f64;
            } else {
                // reseed an empty cluster at the worst-served point
                let far = points
                    .iter()
                    .copied()
                    .max_by(|a, b| nearest(&centroids, *a).1.total_cmp(&nearest(&centroids, *b).1))
                    .unwrap_or(centroids[c]);
                centroids[c] = far;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points.iter().map(|&x| nearest(&centroids, x).1).sum();
    (centroids, inertia)
}

/// Fits `k` price clusters with k-means++ seeding and
/// [`KMEANS_RESTARTS`] restarts.
pub fn kmeans_prices(prices: &[f64], k: usize, seed: u64) -> Result<ClusterModel> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    if prices.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidParameter("non-finite price".into()));
    }
    let mut distinct: Vec<f64> = prices.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::Validation(format!(
            "{} distinct prices cannot form {k} clusters",
            distinct.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let init = plus_plus_init(prices, k, &mut rng);
        let (centroids, inertia) = lloyd(prices, init);
        if best.as_ref().is_none_or(|(_, b)| inertia < *b) {
            best = Some((centroids, inertia));
        }
    }
    let (mut centroids, inertia) = best.ok_or_else(|| Error::Numerical("k-means produced no fit".into()))?;
    centroids.sort_by(|a, b| b.total_cmp(a));
    Ok(ClusterModel {
        centroids,
        inertia,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_pairs() {
        let prices = [1.0, 1.1, 5.0, 5.2];
        let m = kmeans_prices(&prices, 2, 7).unwrap();
        assert_eq!(m.labels(&prices), vec![2, 2, 1, 1]);
        assert!((m.centroids[0] - 5.1).abs() < 1e-12);
        assert!((m.centroids[1] - 1.05).abs() < 1e-12);
    }

    #[test]
    fn too_few_distinct_prices() {
        assert!(kmeans_prices(&[1.0, 1.0, 2.0], 3, 0).is_err());
    }

    #[test]
    fn deterministic_and_ordered() {
        let prices: Vec<f64> = (0..300).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
        let a = kmeans_prices(&prices, DEFAULT_CLUSTERS, 42).unwrap();
        let b = kmeans_prices(&prices, DEFAULT_CLUSTERS, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.centroids.windows(2).all(|w| w[0] > w[1]));
        let labels = a.labels(&prices);
        for l in 1..=5 {
            assert!(labels.contains(&l));
        }
    }

    #[test]
    fn defaults() {
        assert_eq!(DEFAULT_CLUSTERS, 5);
        assert_eq!(KMEANS_RESTARTS, 100);
    }
}
