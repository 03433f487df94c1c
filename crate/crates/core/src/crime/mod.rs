//! Next-month crime prediction from monthly neighborhood vectors.

pub mod forest;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use chrono::{DateTime, FixedOffset};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, Discrete, DiscreteCDF};

pub use forest::{Forest, ForestConfig};

use crate::data::{Clock, NeighborhoodMap, YearMonth};
use crate::error::{Error, Result};
use crate::profiles::NeighborhoodProfile;

#[derive(Debug, Clone, PartialEq)]
pub struct CrimeRecord {
    pub timestamp: DateTime<FixedOffset>,
    pub lat: f64,
    pub lon: f64,
    pub offense: String,
}

/// Reads `timestamp <TAB> lat <TAB> lon <TAB> offense` lines. Blank lines
/// and `#` comments are skipped.
pub fn read_crimes(reader: impl BufRead, clock: &Clock) -> Result<Vec<CrimeRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::parse(i + 1, format!("expected 4 fields, found {}", f.len())));
        }
        let timestamp = clock
            .parse_timestamp(f[0])
            .map_err(|e| Error::parse(i + 1, e.to_string()))?;
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::parse(i + 1, format!("bad number `{s}`")));
        let (lat, lon) = (num(f[1])?, num(f[2])?);
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::parse(i + 1, "coordinates out of range"));
        }
        out.push(CrimeRecord {
            timestamp,
            lat,
            lon,
            offense: f[3].to_string(),
        });
    }
    Ok(out)
}

pub fn write_crimes(mut w: impl Write, crimes: &[CrimeRecord]) -> Result<()> {
    for c in crimes {
        writeln!(w, "{}\t{}\t{}\t{}", c.timestamp.to_rfc3339(), c.lat, c.lon, c.offense)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RateLabel {
    Low,
    Medium,
    High,
}

impl RateLabel {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        [RateLabel::Low, RateLabel::Medium, RateLabel::High].get(i).copied()
    }
}

impl fmt::Display for RateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RateLabel::Low => "Low",
            RateLabel::Medium => "Medium",
            RateLabel::High => "High",
        })
    }
}

/// Monthly incident counts `c`: Low when `c < medium`, High when
/// `c >= high`, Medium otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub medium: u64,
    pub high: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { medium: 1, high: 3 }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if self.medium == 0 || self.high <= self.medium {
            return Err(Error::Config("thresholds need 0 < medium < high".into()));
        }
        Ok(())
    }

    pub fn label(&self, count: u64) -> RateLabel {
        if count >= self.high {
            RateLabel::High
        } else if count >= self.medium {
            RateLabel::Medium
        } else {
            RateLabel::Low
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInstance {
    pub neighborhood_id: String,
    /// Month the features describe; labels come from the month after.
    pub month: YearMonth,
    pub features: Vec<f64>,
    pub count: u64,
    pub rate: RateLabel,
    /// Whether the tracked offense occurred, when one is tracked.
    pub occurrence: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    pub instances: Vec<LabeledInstance>,
    /// (neighborhood, month) cells with incidents but no features.
    pub skipped_without_features: usize,
    pub crimes_outside: usize,
}

/// Pairs month-`m` neighborhood features with month-`m+1` incident counts.
/// Only label months inside the span of the crime records are used, so a
/// missing month is never read as "no crime".
pub fn label_instances(
    crimes: &[CrimeRecord],
    profiles: &[NeighborhoodProfile],
    map: &NeighborhoodMap,
    clock: &Clock,
    thresholds: &Thresholds,
    offense: Option<&str>,
) -> Result<LabelSet> {
    thresholds.validate()?;
    let mut counts: BTreeMap<(&str, YearMonth), (u64, u64)> = BTreeMap::new();
    let mut outside = 0;
    let mut span: Option<(YearMonth, YearMonth)> = None;
    for c in crimes {
        let month = YearMonth::of(&clock.local(&c.timestamp));
        span = Some(span.map_or((month, month), |(a, b)| (a.min(month), b.max(month))));
        match map.lookup(c.lat, c.lon) {
            Some(id) => {
                let e = counts.entry((id, month)).or_default();
                e.0 += 1;
                if offense == Some(c.offense.as_str()) {
                    e.1 += 1;
                }
            }
            None => outside += 1,
        }
    }
    let Some((first, last)) = span else {
        return Err(Error::arg("no crime records"));
    };
    let mut featured = BTreeSet::new();
    let mut instances = Vec::new();
    for p in profiles {
        let month = p.month.ok_or_else(|| {
            Error::arg("crime labels need monthly neighborhood profiles")
        })?;
        featured.insert((p.neighborhood_id.as_str(), month));
        let next = month.next();
        if next < first || next > last {
            continue;
        }
        let (all, tracked) = counts
            .get(&(p.neighborhood_id.as_str(), next))
            .copied()
            .unwrap_or((0, 0));
        instances.push(LabeledInstance {
            neighborhood_id: p.neighborhood_id.clone(),
            month,
            features: p.vector.clone(),
            count: all,
            rate: thresholds.label(all),
            occurrence: offense.map(|_| tracked > 0),
        });
    }
    let skipped = counts
        .keys()
        .filter(|(id, m)| !featured.contains(&(*id, m.prev())))
        .count();
    instances.sort_by(|a, b| a.month.cmp(&b.month).then(a.neighborhood_id.cmp(&b.neighborhood_id)));
    Ok(LabelSet {
        instances,
        skipped_without_features: skipped,
        crimes_outside: outside,
    })
}

/// Splits on the feature month: instances from `first_test` on are test.
/// Every training label month is at most the first test feature month.
pub fn chronological_split(
    instances: &[LabeledInstance],
    first_test: YearMonth,
) -> (Vec<LabeledInstance>, Vec<LabeledInstance>) {
    let (test, train): (Vec<_>, Vec<_>) = instances.iter().cloned().partition(|i| i.month >= first_test);
    debug_assert!(train.iter().all(|t| t.month.next() <= first_test));
    (train, test)
}

/// First feature month of the final `n` distinct feature months.
pub fn last_months(instances: &[LabeledInstance], n: usize) -> Option<YearMonth> {
    let months: BTreeSet<YearMonth> = instances.iter().map(|i| i.month).collect();
    months.iter().rev().nth(n.max(1) - 1).copied()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// `None` for classes absent from both truth and predictions.
    pub per_class_f1: Vec<Option<f64>>,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

pub fn evaluate(predicted: &[usize], truth: &[usize], classes: usize) -> Result<Evaluation> {
    if predicted.len() != truth.len() {
        return Err(Error::arg("predictions and truth differ in length"));
    }
    if truth.is_empty() {
        return Err(Error::arg("empty test set"));
    }
    let k = classes
        .max(predicted.iter().chain(truth).copied().max().unwrap_or(0) + 1);
    let mut confusion = vec![vec![0u64; k]; k];
    for (&p, &t) in predicted.iter().zip(truth) {
        confusion[t][p] += 1;
    }
    let correct: u64 = (0..k).map(|c| confusion[c][c]).sum();
    let per_class_f1: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let actual: u64 = confusion[c].iter().sum();
            let pred: u64 = confusion.iter().map(|r| r[c]).sum();
            if actual == 0 && pred == 0 {
                return None;
            }
            let denom = actual as f64 + pred as f64;
            Some(2.0 * tp / denom)
        })
        .collect();
    let present: Vec<f64> = per_class_f1.iter().flatten().copied().collect();
    Ok(Evaluation {
        accuracy: correct as f64 / truth.len() as f64,
        macro_f1: present.iter().sum::<f64>() / present.len() as f64,
        per_class_f1,
        confusion,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McNemar {
    /// A right, B wrong.
    pub b: u64,
    /// A wrong, B right.
    pub c: u64,
    pub mid_p: f64,
}

/// Mid-p McNemar test on the correctness of two classifiers.
pub fn mcnemar(pred_a: &[usize], pred_b: &[usize], truth: &[usize]) -> Result<McNemar> {
    if pred_a.len() != truth.len() || pred_b.len() != truth.len() {
        return Err(Error::arg("prediction and truth lengths differ"));
    }
    let (mut b, mut c) = (0u64, 0u64);
    for ((&a, &bb), &t) in pred_a.iter().zip(pred_b).zip(truth) {
        match (a == t, bb == t) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok(McNemar { b, c, mid_p: mid_p(b, c) })
}

pub fn mid_p(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let m = b.min(c);
    let dist = Binomial::new(0.5, n).expect("valid binomial");
    let below = if m == 0 { 0.0 } else { dist.cdf(m - 1) };
    (2.0 * (below + 0.5 * dist.pmf(m))).min(1.0)
}

/// Predicts the most frequent training class for every test row; ties go
/// to the lower class index.
pub fn majority_baseline(train: &[usize], test_len: usize) -> Result<Vec<usize>> {
    let Some(&max) = train.iter().max() else {
        return Err(Error::arg("empty training labels"));
    };
    let mut counts = vec![0usize; max + 1];
    train.iter().for_each(|&c| counts[c] += 1);
    let best = (0..counts.len())
        .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
        .expect("non-empty");
    Ok(vec![best; test_len])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Neighborhood, Polygon};

    #[test]
    fn threshold_partition() {
        let t = Thresholds::default();
        assert_eq!(t.label(0), RateLabel::Low);
        assert_eq!(t.label(1), RateLabel::Medium);
        assert_eq!(t.label(2), RateLabel::Medium);
        assert_eq!(t.label(3), RateLabel::High);
        assert_eq!(t.label(300), RateLabel::High);
        assert!(Thresholds { medium: 3, high: 3 }.validate().is_err());
    }

    fn crime(ts: &str, lon: f64, offense: &str) -> CrimeRecord {
        CrimeRecord {
            timestamp: ts.parse().unwrap(),
            lat: 0.5,
            lon,
            offense: offense.into(),
        }
    }

    fn profile(id: &str, y: i32, m: u32) -> NeighborhoodProfile {
        NeighborhoodProfile {
            neighborhood_id: id.into(),
            month: Some(YearMonth::new(y, m).unwrap()),
            vector: vec![m as f64],
            centroid: (0.5, 0.5),
            count: 1,
        }
    }

    #[test]
    fn labels_use_next_month() {
        let map = NeighborhoodMap::new(vec![
            Neighborhood { id: "a".into(), polygons: vec![Polygon::rect(0.0, 0.0, 1.0, 1.0)] },
            Neighborhood { id: "b".into(), polygons: vec![Polygon::rect(0.0, 1.0, 1.0, 2.0)] },
        ])
        .unwrap();
        let crimes = vec![
            crime("2012-03-05T10:00:00+00:00", 0.5, "ASSAULT"),
            crime("2012-04-05T10:00:00+00:00", 0.5, "GRAND LARCENY"),
            crime("2012-04-06T10:00:00+00:00", 0.5, "ASSAULT"),
            crime("2012-04-07T10:00:00+00:00", 0.5, "ASSAULT"),
            crime("2012-04-07T10:00:00+00:00", 1.5, "ASSAULT"),
            crime("2012-04-07T10:00:00+00:00", 9.5, "ASSAULT"),
        ];
        let profiles = vec![profile("a", 2012, 3), profile("b", 2012, 2), profile("b", 2012, 4)];
        let set = label_instances(&crimes, &profiles, &map, &Clock::Recorded, &Thresholds::default(), Some("GRAND LARCENY")).unwrap();
        assert_eq!(set.crimes_outside, 1);
        // b/2012-04 has no May crime data, so it is not labeled
        assert_eq!(set.instances.len(), 2);
        let a = set.instances.iter().find(|i| i.neighborhood_id == "a").unwrap();
        assert_eq!((a.count, a.rate, a.occurrence), (3, RateLabel::High, Some(true)));
        let b = set.instances.iter().find(|i| i.neighborhood_id == "b").unwrap();
        assert_eq!((b.count, b.rate, b.occurrence), (0, RateLabel::Low, Some(false)));
        // a/2012-03 and b/2012-04 have no profile in the month before
        assert_eq!(set.skipped_without_features, 2);
    }

    #[test]
    fn split_has_no_leakage() {
        let inst: Vec<LabeledInstance> = (3..=12)
            .map(|m| LabeledInstance {
                neighborhood_id: "a".into(),
                month: YearMonth::new(2012, m).unwrap(),
                features: vec![0.0],
                count: 0,
                rate: RateLabel::Low,
                occurrence: None,
            })
            .collect();
        let first = last_months(&inst, 2).unwrap();
        assert_eq!(first, YearMonth::new(2012, 11).unwrap());
        let (train, test) = chronological_split(&inst, first);
        assert_eq!((train.len(), test.len()), (8, 2));
        let min_test = test.iter().map(|t| t.month).min().unwrap();
        assert!(train.iter().all(|t| t.month.next() <= min_test));
    }

    #[test]
    fn evaluation_cases() {
        let e = evaluate(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!((e.accuracy, e.macro_f1), (1.0, 1.0));
        let e = evaluate(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(e.accuracy, 0.5);
        assert_eq!(e.confusion, vec![vec![2, 0], vec![2, 0]]);
        assert!((e.per_class_f1[0].unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(e.per_class_f1[1], Some(0.0));
        let e = evaluate(&[0, 0], &[0, 0], 3).unwrap();
        assert_eq!(e.per_class_f1, vec![Some(1.0), None, None]);
    }

    #[test]
    fn mcnemar_values() {
        let truth = vec![1; 10];
        let same = mcnemar(&truth, &truth, &truth).unwrap();
        assert_eq!(same.mid_p, 1.0);
        let wrong = vec![0; 10];
        let r = mcnemar(&truth, &wrong, &truth).unwrap();
        assert_eq!((r.b, r.c), (10, 0));
        assert!((r.mid_p - 2f64.powi(-10)).abs() < 1e-15);
        let swapped = mcnemar(&wrong, &truth, &truth).unwrap();
        assert_eq!(swapped.mid_p, r.mid_p);
        assert!(mid_p(7, 7) > 0.5);
        // b=3, c=9: 2 * (P(X<=2) + P(X=3)/2) for Binomial(12, 1/2)
        let want = 2.0 * ((1.0 + 12.0 + 66.0) + 0.5 * 220.0) / 4096.0;
        assert!((mid_p(3, 9) - want).abs() < 1e-12);
    }

    #[test]
    fn baseline_is_majority() {
        let train = [1, 1, 1, 0, 2];
        assert_eq!(majority_baseline(&train, 3).unwrap(), vec![1, 1, 1]);
        assert_eq!(majority_baseline(&[2, 0], 1).unwrap(), vec![0]);
        assert!(majority_baseline(&[], 1).is_err());
    }
}
