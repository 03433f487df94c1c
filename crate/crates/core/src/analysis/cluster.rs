use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop when inertia improves by less than this fraction.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 4,
            restarts: 20,
            max_iter: 300,
            tol: 1e-6,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub k: usize,
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning run.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centroids.push(points[pick].clone());
        let c = centroids.last().expect("just pushed");
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, c));
        }
    }
    centroids
}

/// Lloyd iterations from the given centroids.
fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, cfg: &KMeansConfig) -> Clustering {
    let k = centroids.len();
    let dim = points[0].len();
    let mut labels = vec![0usize; points.len()];
    let mut history = Vec::new();
    for _ in 0..cfg.max_iter.max(1) {
        let mut inertia = 0.0;
        let mut dists = Vec::with_capacity(points.len());
        for (l, p) in labels.iter_mut().zip(points) {
            let (j, d) = nearest(p, &centroids);
            *l = j;
            inertia += d;
            dists.push(d);
        }
        history.push(inertia);
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&l, p) in labels.iter().zip(points) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // move an empty centroid onto the worst-served point
                let far = (0..points.len())
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("non-empty");
                centroids[j] = points[far].clone();
                dists[far] = 0.0;
            } else {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        if let [.., prev, last] = history[..] {
            if prev - last <= cfg.tol * prev.max(f64::MIN_POSITIVE) {
                break;
            }
        }
    }
    // final assignment against the final centroids
    let mut inertia = 0.0;
    for (l, p) in labels.iter_mut().zip(points) {
        let (j, d) = nearest(p, &centroids);
        *l = j;
        inertia += d;
    }
    history.push(inertia);
    Clustering {
        k,
        labels,
        centroids,
        inertia,
        history,
    }
}

/// K-means with k-means++ seeding. Restarts run in parallel and the run with
/// the lowest inertia wins (earliest run on ties), so the result depends
/// only on the points and the seed.
pub fn kmeans(points: &[Vec<f64>], cfg: &KMeansConfig) -> Result<Clustering> {
    if cfg.k < 1 {
        return Err(Error::arg("k must be at least 1"));
    }
    if cfg.k > points.len() {
        return Err(Error::arg(format!(
            "k = {} exceeds the number of points ({})",
            cfg.k,
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::arg("points have different dimensions"));
    }
    let runs: Vec<Clustering> = (0..cfg.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            let init = plus_plus(points, cfg.k, &mut rng);
            lloyd(points, init, cfg)
        })
        .collect();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("at least one run");
    Ok(best)
}

/// Mean silhouette with Euclidean distances. Members of singleton clusters
/// score 0, as do points with a = b = 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::arg("points and labels differ in length"));
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::arg("silhouette needs at least two non-empty clusters"));
    }
    let n = points.len();
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[labels[j]] += sq_dist(&points[i], &points[j]).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && sizes[c] > 0)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / n as f64)
}

fn comb2(n: u64) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Chance-corrected pair-counting agreement between two labelings.
pub fn adjusted_rand(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::arg(format!(
            "labelings differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::arg("adjusted Rand index needs at least two items"));
    }
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| comb2(n)).sum();
    let sum_a: f64 = rows.values().map(|&n| comb2(n)).sum();
    let sum_b: f64 = cols.values().map(|&n| comb2(n)).sum();
    let expected = sum_a * sum_b / comb2(a.len() as u64);
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        // both labelings are trivial in the same way
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(centers: &[(f64, f64)], per: usize, sd: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sd).unwrap();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, &(x, y)) in centers.iter().enumerate() {
            for _ in 0..per {
                pts.push(vec![x + noise.sample(&mut rng), y + noise.sample(&mut rng)]);
                truth.push(c);
            }
        }
        (pts, truth)
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let (pts, _) = blobs(&[(0.0, 0.0)], 7, 1.0, 1);
        let c = kmeans(&pts, &KMeansConfig { k: 7, ..Default::default() }).unwrap();
        assert!(c.inertia.abs() < 1e-12);
    }

    #[test]
    fn recovers_two_blobs() {
        let (pts, truth) = blobs(&[(0.0, 0.0), (10.0, 10.0)], 50, 0.5, 2);
        let c = kmeans(&pts, &KMeansConfig { k: 2, ..Default::default() }).unwrap();
        assert_eq!(adjusted_rand(&c.labels, &truth).unwrap(), 1.0);
        assert!(silhouette(&pts, &c.labels).unwrap() > 0.9);
    }

    #[test]
    fn restarts_never_hurt_and_inertia_decreases() {
        let (pts, _) = blobs(&[(0.0, 0.0), (3.0, 0.0), (0.0, 3.0), (3.0, 3.0), (1.5, 1.5)], 30, 1.0, 3);
        let one = kmeans(&pts, &KMeansConfig { k: 5, restarts: 1, ..Default::default() }).unwrap();
        let many = kmeans(&pts, &KMeansConfig { k: 5, ..Default::default() }).unwrap();
        assert!(many.inertia <= one.inertia);
        for c in [&one, &many] {
            assert!(c.history.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{:?}", c.history);
        }
        let again = kmeans(&pts, &KMeansConfig { k: 5, ..Default::default() }).unwrap();
        assert_eq!(many, again);
    }

    #[test]
    fn argument_errors() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(kmeans(&pts, &KMeansConfig { k: 0, ..Default::default() }).is_err());
        assert!(kmeans(&pts, &KMeansConfig { k: 3, ..Default::default() }).is_err());
        assert!(adjusted_rand(&[0, 1], &[0]).is_err());
        assert!(silhouette(&pts, &[0, 0]).is_err());
    }

    #[test]
    fn silhouette_degenerate_cases() {
        let same = vec![vec![1.0, 1.0]; 6];
        assert_eq!(silhouette(&same, &[0, 0, 0, 1, 1, 1]).unwrap(), 0.0);
        let pts = vec![vec![0.0], vec![5.0], vec![9.0]];
        assert_eq!(silhouette(&pts, &[0, 1, 2]).unwrap(), 0.0);
    }

    #[test]
    fn silhouette_hand_computed() {
        // a(0)=1, b(0)=4.5 -> 0.777..; a(1)=1, b(1)=3.5 -> 0.714..; cluster {4,5}
        let pts = vec![vec![0.0], vec![1.0], vec![4.0], vec![5.0]];
        let s = silhouette(&pts, &[0, 0, 1, 1]).unwrap();
        let want = (3.5 / 4.5 + 2.5 / 3.5 + 2.5 / 3.5 + 3.5 / 4.5) / 4.0;
        assert!((s - want).abs() < 1e-12);
    }

    #[test]
    fn ari_properties() {
        let a = [0, 0, 1, 1, 2, 2];
        assert_eq!(adjusted_rand(&a, &a).unwrap(), 1.0);
        let permuted = [2, 2, 0, 0, 1, 1];
        assert_eq!(adjusted_rand(&a, &permuted).unwrap(), 1.0);
        // textbook value for this pair
        let x = [0, 0, 0, 1, 1, 1];
        let y = [0, 0, 1, 1, 2, 2];
        assert!((adjusted_rand(&x, &y).unwrap() - 0.24242424242424243).abs() < 1e-12);
        assert_eq!(adjusted_rand(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn ari_of_random_labelings_is_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut sum = 0.0;
        for _ in 0..100 {
            let a: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..4)).collect();
            let b: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..4)).collect();
            let ari = adjusted_rand(&a, &b).unwrap();
            assert!(ari.abs() < 0.05);
            sum += ari;
        }
        assert!((sum / 100.0).abs() < 0.005);
    }
}
