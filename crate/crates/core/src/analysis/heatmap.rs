use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::correlation::PairConfig;
use crate::data::{split_feature_word, Timeslot};
use crate::embed::EmbeddingSpace;
use crate::error::{Error, Result};
use crate::stes::cosine;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Category,
    Timeslot,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "category" => Ok(Axis::Category),
            "timeslot" => Ok(Axis::Timeslot),
            _ => Err(Error::arg(format!("unknown heatmap axis `{s}`"))),
        }
    }
}

/// Group-by-group mean cosine similarity and mean normalized Euclidean
/// distance. Cells with no token pair are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub labels: Vec<String>,
    pub cosine: Vec<Vec<Option<f64>>>,
    pub euclidean: Vec<Vec<Option<f64>>>,
    pub euclidean_range: (f64, f64),
    pub sampled: bool,
}

impl Heatmap {
    /// Tab-separated matrix with a header row; empty cells print as `NA`.
    pub fn write_tsv(&self, mut w: impl Write, cosine: bool) -> Result<()> {
        let m = if cosine { &self.cosine } else { &self.euclidean };
        writeln!(w, "\t{}", self.labels.join("\t"))?;
        for (label, row) in self.labels.iter().zip(m) {
            let cells: Vec<String> = row
                .iter()
                .map(|c| c.map_or("NA".into(), |v| v.to_string()))
                .collect();
            writeln!(w, "{label}\t{}", cells.join("\t"))?;
        }
        Ok(())
    }
}

/// Groups feature words by category or by timeslot and averages over all
/// pairs of distinct tokens across (or within) groups. Euclidean distances
/// are normalized by the range over every pair considered.
pub fn heatmap_stats(space: &EmbeddingSpace, axis: Axis, cfg: &PairConfig) -> Result<Heatmap> {
    let mut groups: BTreeMap<String, usize> = BTreeMap::new();
    let mut slot_order: BTreeMap<String, usize> = BTreeMap::new();
    let mut tokens: Vec<(usize, String)> = Vec::new();
    for i in 0..space.len() {
        if let Some((cat, slot)) = split_feature_word(space.vocabulary.token(i)) {
            let key = match axis {
                Axis::Category => cat.to_string(),
                Axis::Timeslot => slot.to_string(),
            };
            slot_order.insert(slot.to_string(), slot.index());
            groups.insert(key.clone(), 0);
            tokens.push((i, key));
        }
    }
    if tokens.len() < 2 {
        return Err(Error::arg("fewer than two decomposable feature words"));
    }
    let mut labels: Vec<String> = groups.keys().cloned().collect();
    if axis == Axis::Timeslot {
        labels.sort_by_key(|l| l.parse::<Timeslot>().map(|s| s.index()).unwrap_or(usize::MAX));
    }
    for (g, l) in labels.iter().enumerate() {
        groups.insert(l.clone(), g);
    }
    let group_of: Vec<usize> = tokens.iter().map(|(_, k)| groups[k]).collect();
    let m = tokens.len();
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
                (a, b)
            })
            .collect()
    } else {
        (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).collect()
    };
    let stats: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (va, vb) = (space.row(tokens[a].0), space.row(tokens[b].0));
            let e = va.iter().zip(vb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            (cosine(va, vb), e)
        })
        .collect();
    let lo = stats.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let hi = stats.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let g = labels.len();
    let mut sum_c = vec![vec![0.0; g]; g];
    let mut sum_e = vec![vec![0.0; g]; g];
    let mut n = vec![vec![0usize; g]; g];
    for (&(a, b), &(c, e)) in pairs.iter().zip(&stats) {
        let e = if range > 0.0 { (e - lo) / range } else { 0.0 };
        let (x, y) = (group_of[a], group_of[b]);
        for (p, q) in [(x, y), (y, x)] {
            sum_c[p][q] += c;
            sum_e[p][q] += e;
            n[p][q] += 1;
            if x == y {
                break;
            }
        }
    }
    let cell = |s: &Vec<Vec<f64>>, p: usize, q: usize| (n[p][q] > 0).then(|| s[p][q] / n[p][q] as f64);
    Ok(Heatmap {
        cosine: (0..g).map(|p| (0..g).map(|q| cell(&sum_c, p, q)).collect()).collect(),
        euclidean: (0..g).map(|p| (0..g).map(|q| cell(&sum_e, p, q)).collect()).collect(),
        labels,
        euclidean_range: (lo, hi),
        sampled,
    })
}
