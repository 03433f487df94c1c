use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::haversine_km;
use crate::embed::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::stes::cosine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairConfig {
    /// Above this many pairs, pairs are sampled uniformly instead.
    pub cap: usize,
    pub seed: u64,
    pub near_km: f64,
    pub segment: usize,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            cap: 2_000_000,
            seed: 42,
            near_km: 10.0,
            segment: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRecord {
    pub geo_km: f64,
    pub cosine: f64,
    /// Euclidean distance scaled by the range over all pairs, in [0, 1].
    pub euclidean: f64,
}

/// Coefficient and two-sided p-value. Absent when undefined.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Correlation {
    pub pearson: Option<(f64, f64)>,
    pub spearman: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SeriesCorrelation {
    pub n: usize,
    /// Geographic distance against cosine similarity.
    pub cosine: Correlation,
    /// Geographic distance against normalized Euclidean distance.
    pub euclidean: Correlation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub all: SeriesCorrelation,
    pub near: SeriesCorrelation,
    pub near_km: f64,
    pub sampled: bool,
    /// Raw Euclidean (min, max) used for normalization.
    pub euclidean_range: (f64, f64),
}

fn two_sided_p(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Pearson coefficient and p-value. `None` for fewer than three points or a
/// constant series.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Some((r, two_sided_p(r, n)))
}

/// 1-based ranks, ties sharing their average rank.
pub(crate) fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if x.len() != y.len() {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

fn correlate(records: &[&PairRecord]) -> SeriesCorrelation {
    let geo: Vec<f64> = records.iter().map(|r| r.geo_km).collect();
    let cos: Vec<f64> = records.iter().map(|r| r.cosine).collect();
    let euc: Vec<f64> = records.iter().map(|r| r.euclidean).collect();
    SeriesCorrelation {
        n: records.len(),
        cosine: Correlation {
            pearson: pearson(&geo, &cos),
            spearman: spearman(&geo, &cos),
        },
        euclidean: Correlation {
            pearson: pearson(&geo, &euc),
            spearman: spearman(&geo, &euc),
        },
    }
}

/// Compares geographic distance with vector similarity over pairs of
/// location words, for all pairs and for pairs within `near_km`. Tokens
/// without coordinates are ignored. Returns the pair records sorted by
/// distance.
pub fn distance_correlation(
    space: &EmbeddingSpace,
    coords: &HashMap<String, (f64, f64)>,
    cfg: &PairConfig,
) -> Result<(CorrelationReport, Vec<PairRecord>)> {
    let located: Vec<(usize, (f64, f64))> = (0..space.len())
        .filter_map(|i| coords.get(space.vocabulary.token(i)).map(|&c| (i, c)))
        .collect();
    let m = located.len();
    if m < 2 {
        return Err(Error::arg("need at least two locations with coordinates"));
    }
    let total = m * (m - 1) / 2;
    let sampled = total > cfg.cap;
    let pairs: Vec<(usize, usize)> = if sampled {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        (0..cfg.cap)
            .map(|_| {
                let a = rng.gen_range(0..m);
                let mut b = rng.gen_range(0..m - 1);
                if b >= a {
                    b += 1;
                }
                (a.min(b), a.max(b))
            })
            .collect()
    } else {
        (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).collect()
    };
    let raw: Vec<(f64, f64, f64)> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (ia, ca) = located[a];
            let (ib, cb) = located[b];
            let (va, vb) = (space.row(ia), space.row(ib));
            let euc = va
                .iter()
                .zip(vb)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            (haversine_km(ca, cb), cosine(va, vb), euc)
        })
        .collect();
    let lo = raw.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let hi = raw.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let mut records: Vec<PairRecord> = raw
        .into_iter()
        .map(|(g, c, e)| PairRecord {
            geo_km: g,
            cosine: c,
            euclidean: if range > 0.0 { (e - lo) / range } else { 0.0 },
        })
        .collect();
    records.sort_by(|a, b| a.geo_km.total_cmp(&b.geo_km));
    let all: Vec<&PairRecord> = records.iter().collect();
    let near: Vec<&PairRecord> = records.iter().filter(|r| r.geo_km <= cfg.near_km).collect();
    let report = CorrelationReport {
        all: correlate(&all),
        near: correlate(&near),
        near_km: cfg.near_km,
        sampled,
        euclidean_range: (lo, hi),
    };
    Ok((report, records))
}

/// Means over consecutive windows of distance-sorted pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSegment {
    pub n: usize,
    pub geo_km: f64,
    pub cosine: f64,
    pub euclidean: f64,
}

pub fn pair_segments(sorted: &[PairRecord], len: usize) -> Vec<PairSegment> {
    sorted
        .chunks(len.max(1))
        .map(|c| {
            let n = c.len() as f64;
            PairSegment {
                n: c.len(),
                geo_km: c.iter().map(|r| r.geo_km).sum::<f64>() / n,
                cosine: c.iter().map(|r| r.cosine).sum::<f64>() / n,
                euclidean: c.iter().map(|r| r.euclidean).sum::<f64>() / n,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Vocabulary, WordKind};
    use crate::embed::SoftmaxMode;

    #[test]
    fn perfect_correlations() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.7).collect();
        let (r, p) = pearson(&x, &x).unwrap();
        assert!((r - 1.0).abs() < 1e-12 && p < 1e-12);
        assert!((spearman(&x, &x).unwrap().0 - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap().0 + 1.0).abs() < 1e-12);
        assert!(pearson(&x, &vec![3.0; 50]).is_none());
    }

    #[test]
    fn p_value_matches_reference() {
        // r = 0.5 with n = 12 gives t = 1.8257 on 10 df, p ~ 0.0979
        let p = two_sided_p(0.5, 12);
        assert!((p - 0.09785).abs() < 2e-4, "{p}");
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn spearman_is_monotone_invariant() {
        let x: Vec<f64> = (1..40).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0).collect();
        assert!((spearman(&x, &y).unwrap().0 - 1.0).abs() < 1e-12);
        assert!(pearson(&x, &y).unwrap().0 < 1.0 - 1e-6);
    }

    fn line_space(n: usize) -> (EmbeddingSpace, HashMap<String, (f64, f64)>) {
        let vocab = Vocabulary::from_counts((0..n).map(|i| (format!("v{i}"), 1))).unwrap();
        let mut s = EmbeddingSpace::random(vocab, WordKind::Location, 2, SoftmaxMode::Exact, 0.1, 1).unwrap();
        let mut coords = HashMap::new();
        for i in 0..n {
            let tok = s.vocabulary.token(i).to_string();
            let x: f64 = tok[1..].parse().unwrap();
            // vectors rotate with position, so far-apart venues point apart
            let angle = x / n as f64 * std::f64::consts::PI;
            s.input_weights[2 * i] = angle.cos();
            s.input_weights[2 * i + 1] = angle.sin();
            coords.insert(tok, (40.0, -74.0 + x * 0.01));
        }
        (s, coords)
    }

    #[test]
    fn planted_geometry_correlates() {
        let (s, coords) = line_space(60);
        let (rep, records) = distance_correlation(&s, &coords, &PairConfig::default()).unwrap();
        assert_eq!(records.len(), 60 * 59 / 2);
        assert!(!rep.sampled);
        assert!(rep.all.cosine.pearson.unwrap().0 < -0.9);
        assert!(rep.all.euclidean.spearman.unwrap().0 > 0.9);
        assert!(rep.near.n < rep.all.n);
        assert!(records.iter().all(|r| (0.0..=1.0).contains(&r.euclidean) && r.geo_km >= 0.0));
        let segs = pair_segments(&records, 500);
        assert_eq!(segs.iter().map(|s| s.n).sum::<usize>(), records.len());
        assert!(segs.first().unwrap().cosine > segs.last().unwrap().cosine);
    }

    #[test]
    fn sampling_respects_cap() {
        let (s, coords) = line_space(60);
        let cfg = PairConfig { cap: 300, ..Default::default() };
        let (rep, records) = distance_correlation(&s, &coords, &cfg).unwrap();
        assert!(rep.sampled);
        assert_eq!(records.len(), 300);
        assert!(rep.all.cosine.pearson.unwrap().0 < -0.8);
    }
}
