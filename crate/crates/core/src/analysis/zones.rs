use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::str::FromStr;

use serde_json::{Map, Value};

use super::cluster::{kmeans, Clustering, KMeansConfig};
use crate::data::{CategoryHierarchy, CheckIn, Clock, NeighborhoodMap, YearMonth};
use crate::error::{Error, Result};
use crate::profiles::NeighborhoodProfile;

/// Count-based neighborhood descriptions used as clustering baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundTruth {
    /// Feature-word counts.
    FeatureWords,
    /// Top-level category counts.
    Categories,
}

impl FromStr for GroundTruth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "feature" | "feature_words" => Ok(GroundTruth::FeatureWords),
            "2" | "category" | "categories" => Ok(GroundTruth::Categories),
            _ => Err(Error::arg(format!("unknown ground-truth alternative `{s}`"))),
        }
    }
}

/// Unit-l2 count vectors per neighborhood over a shared sorted column set.
/// Returns (neighborhood ids, column names, rows).
pub fn ground_truth_features(
    checkins: &[CheckIn],
    map: &NeighborhoodMap,
    alt: GroundTruth,
    hierarchy: &CategoryHierarchy,
    clock: &Clock,
) -> (Vec<String>, Vec<String>, Vec<Vec<f64>>) {
    let (columns, profiles) = ground_truth_profiles(checkins, map, alt, hierarchy, clock, false);
    let (ids, rows) = profiles.into_iter().map(|p| (p.neighborhood_id, p.vector)).unzip();
    (ids, columns, rows)
}

/// Like [`ground_truth_features`], but shaped as neighborhood profiles and
/// optionally split by month. Returns the column names and the profiles,
/// sorted by neighborhood id, then month.
pub fn ground_truth_profiles(
    checkins: &[CheckIn],
    map: &NeighborhoodMap,
    alt: GroundTruth,
    hierarchy: &CategoryHierarchy,
    clock: &Clock,
    monthly: bool,
) -> (Vec<String>, Vec<NeighborhoodProfile>) {
    type Tally = (HashMap<String, u64>, f64, f64);
    let mut tallies: BTreeMap<(&str, Option<YearMonth>), Tally> = BTreeMap::new();
    let mut columns = BTreeSet::new();
    for c in checkins {
        let Some(id) = map.lookup(c.lat, c.lon) else {
            continue;
        };
        let key = match alt {
            GroundTruth::FeatureWords => c.feature_word(clock),
            GroundTruth::Categories => hierarchy.top_level(&c.category).to_string(),
        };
        columns.insert(key.clone());
        let month = monthly.then(|| c.month(clock));
        let t = tallies.entry((id, month)).or_default();
        *t.0.entry(key).or_default() += 1;
        t.1 += c.lat;
        t.2 += c.lon;
    }
    let columns: Vec<String> = columns.into_iter().collect();
    let col_index: HashMap<&str, usize> = columns.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let profiles = tallies
        .into_iter()
        .map(|((id, month), (tally, lat, lon))| {
            let mut v = vec![0.0; columns.len()];
            let mut count = 0;
            for (k, n) in tally {
                v[col_index[k.as_str()]] = n as f64;
                count += n as usize;
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            NeighborhoodProfile {
                neighborhood_id: id.to_string(),
                month,
                vector: v,
                centroid: (lat / count as f64, lon / count as f64),
                count,
            }
        })
        .collect();
    (columns, profiles)
}

/// K-means over neighborhood profile vectors. Returns the ids in input
/// order alongside the clustering.
pub fn cluster_profiles(
    profiles: &[NeighborhoodProfile],
    cfg: &KMeansConfig,
) -> Result<(Vec<String>, Clustering)> {
    let points: Vec<Vec<f64>> = profiles.iter().map(|p| p.vector.clone()).collect();
    let c = kmeans(&points, cfg)?;
    Ok((profiles.iter().map(|p| p.neighborhood_id.clone()).collect(), c))
}

/// Share of check-ins per top-level category within each cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    pub categories: Vec<String>,
    /// One row per cluster; empty clusters are all zeros.
    pub ratios: Vec<Vec<f64>>,
    pub counts: Vec<u64>,
}

impl Composition {
    pub fn write_tsv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "cluster\tcheckins\t{}", self.categories.join("\t"))?;
        for (k, (row, n)) in self.ratios.iter().zip(&self.counts).enumerate() {
            let cells: Vec<String> = row.iter().map(|r| format!("{r:.4}")).collect();
            writeln!(w, "{k}\t{n}\t{}", cells.join("\t"))?;
        }
        Ok(())
    }
}

pub fn cluster_composition(
    ids: &[String],
    labels: &[usize],
    checkins: &[CheckIn],
    map: &NeighborhoodMap,
    hierarchy: &CategoryHierarchy,
) -> Result<Composition> {
    if ids.len() != labels.len() {
        return Err(Error::arg("ids and labels differ in length"));
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let label_of: HashMap<&str, usize> = ids.iter().map(String::as_str).zip(labels.iter().copied()).collect();
    let mut tallies: Vec<BTreeMap<&str, u64>> = vec![BTreeMap::new(); k];
    let mut cats = BTreeSet::new();
    for c in checkins {
        let Some(&l) = map.lookup(c.lat, c.lon).and_then(|id| label_of.get(id)) else {
            continue;
        };
        let top = hierarchy.top_level(&c.category);
        cats.insert(top);
        *tallies[l].entry(top).or_default() += 1;
    }
    let categories: Vec<String> = cats.iter().map(|c| c.to_string()).collect();
    let counts: Vec<u64> = tallies.iter().map(|t| t.values().sum()).collect();
    let ratios = tallies
        .iter()
        .zip(&counts)
        .map(|(t, &n)| {
            cats.iter()
                .map(|c| if n == 0 { 0.0 } else { *t.get(c).unwrap_or(&0) as f64 / n as f64 })
                .collect()
        })
        .collect();
    Ok(Composition {
        categories,
        ratios,
        counts,
    })
}

/// Writes the neighborhoods with a `cluster` property (null when the
/// neighborhood was not clustered).
pub fn write_zones_geojson(
    w: impl Write,
    map: &NeighborhoodMap,
    id_key: &str,
    ids: &[String],
    labels: &[usize],
) -> Result<()> {
    let label_of: HashMap<&str, usize> = ids.iter().map(String::as_str).zip(labels.iter().copied()).collect();
    map.write_geojson(w, id_key, |id| {
        let mut m = Map::new();
        m.insert(
            "cluster".into(),
            label_of.get(id).map_or(Value::Null, |&l| Value::from(l)),
        );
        m
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Neighborhood, Polygon};
    use chrono::{DateTime, FixedOffset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map() -> NeighborhoodMap {
        NeighborhoodMap::new(vec![
            Neighborhood { id: "a".into(), polygons: vec![Polygon::rect(0.0, 0.0, 1.0, 1.0)] },
            Neighborhood { id: "b".into(), polygons: vec![Polygon::rect(0.0, 1.0, 1.0, 2.0)] },
        ])
        .unwrap()
    }

    fn ci(cat: &str, lon: f64) -> CheckIn {
        let t: DateTime<FixedOffset> = "2012-04-03T12:00:00+00:00".parse().unwrap();
        CheckIn::new("u", "v", cat, t, 0.5, lon).unwrap()
    }

    #[test]
    fn one_checkin_is_one_hot() {
        let (ids, cols, rows) =
            ground_truth_features(&[ci("Bar", 0.5)], &map(), GroundTruth::FeatureWords, &CategoryHierarchy::new(), &Clock::Recorded);
        assert_eq!(ids, vec!["a"]);
        assert_eq!(cols, vec!["Bar_Noon"]);
        assert_eq!(rows, vec![vec![1.0]]);
    }

    #[test]
    fn counts_match_tally_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cats = ["Bar", "Cafe", "Gym", "Office", "Park"];
        let mut h = CategoryHierarchy::new();
        h.insert("Bar", "Nightlife");
        h.insert("Cafe", "Food");
        let cs: Vec<CheckIn> = (0..1000)
            .map(|_| ci(cats[rng.gen_range(0..5)], rng.gen_range(0.01..1.99)))
            .collect();
        let (ids, cols, rows) = ground_truth_features(&cs, &map(), GroundTruth::Categories, &h, &Clock::Recorded);
        assert_eq!(cols, vec!["Food", "Gym", "Nightlife", "Office", "Park"]);
        for (id, row) in ids.iter().zip(&rows) {
            assert!((row.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
            let lon_range = if id == "a" { 0.0..1.0 } else { 1.0..2.0 };
            let tally: Vec<f64> = cols
                .iter()
                .map(|col| {
                    cs.iter()
                        .filter(|c| lon_range.contains(&c.lon) && h.top_level(&c.category) == col)
                        .count() as f64
                })
                .collect();
            let norm = tally.iter().map(|x| x * x).sum::<f64>().sqrt();
            for (x, t) in row.iter().zip(&tally) {
                assert!((x - t / norm).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn composition_rows_sum_to_one() {
        let cs = vec![ci("Bar", 0.5), ci("Bar", 0.5), ci("Cafe", 1.5), ci("Bar", 1.5)];
        let ids = vec!["a".to_string(), "b".to_string()];
        let comp = cluster_composition(&ids, &[0, 1], &cs, &map(), &CategoryHierarchy::new()).unwrap();
        assert_eq!(comp.ratios[0], vec![1.0, 0.0]);
        for row in &comp.ratios {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let single = cluster_composition(&ids, &[0, 0], &cs[..2], &map(), &CategoryHierarchy::new()).unwrap();
        assert_eq!(single.ratios, vec![vec![1.0]]);
    }

    #[test]
    fn geojson_carries_cluster() {
        let mut out = Vec::new();
        write_zones_geojson(&mut out, &map(), "id", &["b".to_string()], &[3]).unwrap();
        let v: Value = serde_json::from_slice(&out).unwrap();
        let feats = v["features"].as_array().unwrap();
        assert_eq!(feats[0]["properties"]["cluster"], Value::Null);
        assert_eq!(feats[1]["properties"]["cluster"], 3);
    }
}
