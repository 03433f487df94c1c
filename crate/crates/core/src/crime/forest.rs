//! Bagged CART ensemble with gini impurity.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub trees: usize,
    /// Features tried per split; `None` means `round(sqrt(d))`.
    pub max_features: Option<usize>,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            trees: 200,
            max_features: None,
            max_depth: None,
            min_samples_split: 2,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(Vec<f64>),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn proba(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(p) => return p,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    classes: usize,
    dim: usize,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    classes: usize,
    max_features: usize,
    cfg: &'a ForestConfig,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&self, rows: &[usize]) -> Node {
        let mut p = vec![0.0; self.classes];
        for &r in rows {
            p[self.y[r]] += 1.0;
        }
        let n = rows.len() as f64;
        p.iter_mut().for_each(|v| *v /= n);
        Node::Leaf(p)
    }

    /// Best (feature, threshold, impurity decrease) over a random feature
    /// subset. Keeps drawing features past the subset size while none of
    /// them can split the rows.
    fn best_split(&self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let d = self.x[0].len();
        let mut features: Vec<usize> = (0..d).collect();
        features.shuffle(rng);
        let mut parent = vec![0usize; self.classes];
        for &r in rows {
            parent[self.y[r]] += 1;
        }
        let n = rows.len();
        let parent_gini = gini(&parent, n);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut sorted = rows.to_vec();
        for (tried, &f) in features.iter().enumerate() {
            if tried >= self.max_features && best.is_some() {
                break;
            }
            sorted.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = vec![0usize; self.classes];
            let mut right = parent.clone();
            for i in 0..n - 1 {
                let c = self.y[sorted[i]];
                left[c] += 1;
                right[c] -= 1;
                let (a, b) = (self.x[sorted[i]][f], self.x[sorted[i + 1]][f]);
                if a == b {
                    continue;
                }
                let nl = i + 1;
                let nr = n - nl;
                let child = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
                let gain = parent_gini - child;
                if best.map_or(true, |(_, _, g)| gain > g) {
                    let mut t = a + (b - a) / 2.0;
                    if t >= b {
                        t = a;
                    }
                    best = Some((f, t, gain));
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(Vec::new()));
        let first = self.y[rows[0]];
        let pure = rows.iter().all(|&r| self.y[r] == first);
        let deep = self.cfg.max_depth.is_some_and(|m| depth >= m);
        if pure || deep || rows.len() < self.cfg.min_samples_split.max(2) {
            self.nodes[id] = self.leaf(&rows);
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&rows, rng) else {
            self.nodes[id] = self.leaf(&rows);
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| self.x[i][feature] <= threshold);
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

fn cmp_rows(a: &(&Vec<f64>, usize), b: &(&Vec<f64>, usize)) -> Ordering {
    a.1.cmp(&b.1).then_with(|| {
        a.0.iter()
            .zip(b.0.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

impl Forest {
    /// Fits the ensemble. Rows are put into a canonical order first, so the
    /// model does not depend on the order they are passed in.
    pub fn fit(x: &[Vec<f64>], y: &[usize], cfg: &ForestConfig) -> Result<Forest> {
        if x.len() != y.len() {
            return Err(Error::arg("feature rows and labels differ in length"));
        }
        if x.is_empty() {
            return Err(Error::Training("empty training set".into()));
        }
        let dim = x[0].len();
        if dim == 0 || x.iter().any(|r| r.len() != dim) {
            return Err(Error::arg("feature rows must share a non-zero dimension"));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::arg("features must be finite"));
        }
        let classes = y.iter().copied().max().expect("non-empty") + 1;
        let present = {
            let mut seen = vec![false; classes];
            y.iter().for_each(|&c| seen[c] = true);
            seen.iter().filter(|&&s| s).count()
        };
        if present < 2 {
            return Err(Error::Training(format!(
                "training labels contain a single class ({}); a classifier needs at least two",
                y[0]
            )));
        }
        if cfg.trees == 0 {
            return Err(Error::Config("forest needs at least one tree".into()));
        }
        let mut rows: Vec<(&Vec<f64>, usize)> = x.iter().zip(y.iter().copied()).collect();
        rows.sort_by(cmp_rows);
        let cx: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
        let cy: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let max_features = cfg
            .max_features
            .unwrap_or_else(|| ((dim as f64).sqrt().round() as usize).max(1))
            .clamp(1, dim);
        let n = cx.len();
        let trees = (0..cfg.trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(t as u64);
                let sample: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                let mut b = Builder {
                    x: &cx,
                    y: &cy,
                    classes,
                    max_features,
                    cfg,
                    nodes: Vec::new(),
                };
                b.grow(sample, 0, &mut rng);
                Tree { nodes: b.nodes }
            })
            .collect();
        Ok(Forest {
            trees,
            classes,
            dim,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Mean of the trees' leaf class distributions.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::arg(format!(
                "expected {} features, got {}",
                self.dim,
                x.len()
            )));
        }
        let mut p = vec![0.0; self.classes];
        for t in &self.trees {
            for (a, b) in p.iter_mut().zip(t.proba(x)) {
                *a += b;
            }
        }
        let n = self.trees.len() as f64;
        p.iter_mut().for_each(|v| *v /= n);
        Ok(p)
    }

    /// Most probable class; ties go to the lower class index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let p = self.predict_proba(x)?;
        let mut best = 0;
        for (c, &v) in p.iter().enumerate() {
            if v > p[best] {
                best = c;
            }
        }
        Ok(best)
    }

    pub fn predict_all(&self, xs: &[Vec<f64>]) -> Result<Vec<usize>> {
        xs.par_iter().map(|x| self.predict(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let y = x.iter().map(|r| usize::from(r[0] + 0.5 * r[1] > 0.1)).collect();
        (x, y)
    }

    #[test]
    fn separable_toy_set() {
        let (x, y) = toy(1, 200);
        let f = Forest::fit(&x, &y, &ForestConfig { trees: 50, ..Default::default() }).unwrap();
        let pred = f.predict_all(&x).unwrap();
        let acc = pred.iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64;
        assert!(acc >= 0.99, "{acc}");
        let (tx, ty) = toy(2, 200);
        let pred = f.predict_all(&tx).unwrap();
        let acc = pred.iter().zip(&ty).filter(|(a, b)| a == b).count() as f64 / ty.len() as f64;
        assert!(acc > 0.9, "{acc}");
    }

    #[test]
    fn row_order_does_not_matter() {
        let (x, y) = toy(3, 120);
        let cfg = ForestConfig { trees: 20, ..Default::default() };
        let a = Forest::fit(&x, &y, &cfg).unwrap();
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
        let px: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
        let py: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
        let b = Forest::fit(&px, &py, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn refuses_single_class() {
        let x = vec![vec![1.0], vec![2.0]];
        let err = Forest::fit(&x, &[1, 1], &ForestConfig::default()).unwrap_err();
        assert!(err.to_string().contains("single class"));
    }

    #[test]
    fn probabilities_sum_to_one() {
        let (x, y) = toy(4, 60);
        let f = Forest::fit(&x, &y, &ForestConfig { trees: 10, max_depth: Some(2), ..Default::default() }).unwrap();
        let p = f.predict_proba(&[0.0, 0.0]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(f.predict_proba(&[0.0]).is_err());
    }

    #[test]
    fn gini_values() {
        assert_eq!(gini(&[5, 0], 5), 0.0);
        assert!((gini(&[5, 5], 10) - 0.5).abs() < 1e-15);
        assert!((gini(&[1, 1, 1], 3) - 2.0 / 3.0).abs() < 1e-15);
    }
}
