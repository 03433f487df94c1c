//! Train/test splitting and top-k recommendation metrics.

use std::collections::{BTreeMap, HashSet};

use crate::data::CheckIn;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct Split {
    pub train: Vec<CheckIn>,
    pub test: Vec<CheckIn>,
    /// Users with fewer than two check-ins, kept wholly in train.
    pub train_only_users: usize,
}

/// Per-user chronological split: the first `ceil(ratio * n)` check-ins of
/// each user train, the rest test. Output keeps users sorted by id and
/// check-ins in time order within a user.
pub fn split_train_test(checkins: &[CheckIn], ratio: f64) -> Result<Split> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::arg(format!("split ratio {ratio} outside (0, 1]")));
    }
    let mut by_user: BTreeMap<&str, Vec<&CheckIn>> = BTreeMap::new();
    for c in checkins {
        by_user.entry(c.user_id.as_str()).or_default().push(c);
    }
    let mut split = Split::default();
    for (_, mut cs) in by_user {
        cs.sort_by_key(|c| c.timestamp);
        let n = cs.len();
        if n < 2 {
            split.train_only_users += 1;
            split.train.extend(cs.into_iter().cloned());
            continue;
        }
        // the epsilon keeps 0.8 * 10 from rounding up to 9
        let cut = ((ratio * n as f64) - 1e-9).ceil() as usize;
        split.train.extend(cs[..cut].iter().map(|&c| c.clone()));
        split.test.extend(cs[cut..].iter().map(|&c| c.clone()));
    }
    Ok(split)
}

/// One held-out check-in and the list recommended for it.
#[derive(Debug, Clone, PartialEq)]
pub struct TestCase {
    pub user_id: String,
    pub truth: String,
    pub ranked: Vec<String>,
}

/// Metric name to value, e.g. `acc@5`.
pub type MetricTable = BTreeMap<String, f64>;

/// p@k, r@k, acc@k and MAP@k.
///
/// acc@k and MAP@k average over test cases; a case scores `1/rank` for MAP
/// when its venue is in the top k. p@k and r@k compare every list
/// recommended to a user with the set of all that user's test venues,
/// average over the user's lists, then over users.
pub fn metric_suite(cases: &[TestCase], ks: &[usize]) -> Result<MetricTable> {
    if cases.is_empty() {
        return Err(Error::arg("no test cases"));
    }
    if ks.iter().any(|&k| k == 0) {
        return Err(Error::arg("k must be at least 1"));
    }
    let mut per_user: BTreeMap<&str, Vec<&TestCase>> = BTreeMap::new();
    for c in cases {
        per_user.entry(c.user_id.as_str()).or_default().push(c);
    }
    let mut out = MetricTable::new();
    for &k in ks {
        let mut acc = 0.0;
        let mut ap = 0.0;
        for c in cases {
            if let Some(r) = c.ranked.iter().take(k).position(|v| *v == c.truth) {
                acc += 1.0;
                ap += 1.0 / (r + 1) as f64;
            }
        }
        let (mut p, mut r) = (0.0, 0.0);
        for user_cases in per_user.values() {
            let truth: HashSet<&str> = user_cases.iter().map(|c| c.truth.as_str()).collect();
            let (mut up, mut ur) = (0.0, 0.0);
            for c in user_cases {
                let mut seen = HashSet::new();
                let hits = c
                    .ranked
                    .iter()
                    .take(k)
                    .filter(|v| seen.insert(v.as_str()) && truth.contains(v.as_str()))
                    .count() as f64;
                up += hits / k as f64;
                ur += hits / truth.len() as f64;
            }
            p += up / user_cases.len() as f64;
            r += ur / user_cases.len() as f64;
        }
        let n = cases.len() as f64;
        let u = per_user.len() as f64;
        out.insert(format!("p@{k}"), p / u);
        out.insert(format!("r@{k}"), r / u);
        out.insert(format!("acc@{k}"), acc / n);
        out.insert(format!("map@{k}"), ap / n);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{DateTime, Duration, FixedOffset};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn case(u: &str, truth: &str, ranked: &[&str]) -> TestCase {
        TestCase {
            user_id: u.into(),
            truth: truth.into(),
            ranked: ranked.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn checkins(user: &str, n: usize) -> Vec<CheckIn> {
        let t0: DateTime<FixedOffset> = "2012-04-03T12:00:00+00:00".parse().unwrap();
        (0..n)
            .map(|i| CheckIn::new(user, format!("v{i}"), "Bar", t0 + Duration::hours(i as i64), 0.0, 0.0).unwrap())
            .collect()
    }

    #[test]
    fn split_sizes() {
        for (n, train) in [(10, 8), (5, 4), (1, 1), (2, 2), (3, 3), (4, 4), (6, 5)] {
            let s = split_train_test(&checkins("u", n), 0.8).unwrap();
            assert_eq!(s.train.len(), train, "n={n}");
            assert_eq!(s.test.len(), n - train);
        }
        assert_eq!(split_train_test(&checkins("u", 1), 0.8).unwrap().train_only_users, 1);
    }

    #[test]
    fn split_is_chronological_per_user() {
        let mut cs = checkins("a", 9);
        cs.extend(checkins("b", 7));
        cs.reverse();
        let s = split_train_test(&cs, 0.8).unwrap();
        for t in &s.test {
            assert!(s
                .train
                .iter()
                .filter(|c| c.user_id == t.user_id)
                .all(|c| c.timestamp <= t.timestamp));
        }
    }

    #[test]
    fn single_hit_at_rank_one() {
        let m = metric_suite(&[case("u", "a", &["a", "b"])], &[1]).unwrap();
        assert_eq!(m["acc@1"], 1.0);
        assert_eq!(m["p@1"], 1.0);
        assert_eq!(m["map@1"], 1.0);
        assert_eq!(m["r@1"], 1.0);
    }

    #[test]
    fn hit_at_rank_three() {
        let m = metric_suite(&[case("u", "c", &["a", "b", "c", "d", "e"])], &[1, 5]).unwrap();
        assert_eq!(m["acc@5"], 1.0);
        assert_eq!(m["acc@1"], 0.0);
        assert!((m["map@5"] - 1.0 / 3.0).abs() < 1e-15);
        assert!((m["p@5"] - 0.2).abs() < 1e-15);
    }

    fn brute_force(cases: &[TestCase], k: usize) -> [f64; 4] {
        let users: Vec<&str> = {
            let mut u: Vec<&str> = cases.iter().map(|c| c.user_id.as_str()).collect();
            u.sort();
            u.dedup();
            u
        };
        let (mut p, mut r) = (0.0, 0.0);
        for u in &users {
            let mine: Vec<&TestCase> = cases.iter().filter(|c| c.user_id == *u).collect();
            let mut gt: Vec<&str> = mine.iter().map(|c| c.truth.as_str()).collect();
            gt.sort();
            gt.dedup();
            let mut ps = Vec::new();
            let mut rs = Vec::new();
            for c in &mine {
                let mut top: Vec<&str> = c.ranked.iter().take(k).map(String::as_str).collect();
                top.sort();
                top.dedup();
                let inter = top.iter().filter(|v| gt.contains(v)).count() as f64;
                ps.push(inter / k as f64);
                rs.push(inter / gt.len() as f64);
            }
            p += ps.iter().sum::<f64>() / ps.len() as f64;
            r += rs.iter().sum::<f64>() / rs.len() as f64;
        }
        let mut acc = 0.0;
        let mut map = 0.0;
        for c in cases {
            for (i, v) in c.ranked.iter().enumerate().take(k) {
                if *v == c.truth {
                    acc += 1.0;
                    map += 1.0 / (i as f64 + 1.0);
                    break;
                }
            }
        }
        let n = cases.len() as f64;
        [p / users.len() as f64, r / users.len() as f64, acc / n, map / n]
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let venues: Vec<String> = (0..15).map(|i| format!("v{i}")).collect();
        for _ in 0..100 {
            let n = rng.gen_range(1..30);
            let cases: Vec<TestCase> = (0..n)
                .map(|_| {
                    let mut ranked = venues.clone();
                    ranked.shuffle(&mut rng);
                    ranked.truncate(rng.gen_range(0..12));
                    TestCase {
                        user_id: format!("u{}", rng.gen_range(0..4)),
                        truth: venues[rng.gen_range(0..venues.len())].clone(),
                        ranked,
                    }
                })
                .collect();
            let m = metric_suite(&cases, &[1, 5, 10]).unwrap();
            for k in [1, 5, 10] {
                let [p, r, acc, map] = brute_force(&cases, k);
                assert!((m[&format!("p@{k}")] - p).abs() < 1e-12);
                assert!((m[&format!("r@{k}")] - r).abs() < 1e-12);
                assert!((m[&format!("acc@{k}")] - acc).abs() < 1e-12);
                assert!((m[&format!("map@{k}")] - map).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn random_ranking_expectation() {
        let venues: Vec<String> = (0..1000).map(|i| format!("v{i:04}")).collect();
        let cases_per_seed = 100;
        let mut total = 0.0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cases: Vec<TestCase> = (0..cases_per_seed)
                .map(|i| {
                    let ranked: Vec<String> = venues.choose_multiple(&mut rng, 10).cloned().collect();
                    TestCase {
                        user_id: format!("u{i}"),
                        truth: venues[rng.gen_range(0..1000)].clone(),
                        ranked,
                    }
                })
                .collect();
            total += metric_suite(&cases, &[10]).unwrap()["acc@10"];
        }
        let mean = total / 100.0;
        let p = 0.01;
        let sigma = (p * (1.0 - p) / (100.0 * cases_per_seed as f64)).sqrt();
        assert!((mean - p).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn rejects_empty_and_zero_k() {
        assert!(metric_suite(&[], &[1]).is_err());
        assert!(metric_suite(&[case("u", "a", &["a"])], &[0]).is_err());
    }
}
