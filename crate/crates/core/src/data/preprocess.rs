use std::collections::HashMap;

use chrono::Duration;

use super::checkin::CheckIn;

#[derive(Debug, Clone)]
pub struct PreprocessConfig {
    /// Users and venues with fewer surviving check-ins are dropped.
    pub min_posts: usize,
    /// Repeated check-ins are only collapsed when they follow their
    /// predecessor within this gap. `None` collapses any run.
    pub max_gap: Option<Duration>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            min_posts: 10,
            max_gap: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PreprocessReport {
    pub input: usize,
    pub repeats_removed: usize,
    pub sparse_removed: usize,
    pub rounds: usize,
    pub output: usize,
}

impl PreprocessReport {
    pub fn is_empty_result(&self) -> bool {
        self.output == 0
    }
}

/// Cleans a raw check-in stream.
///
/// Runs of consecutive check-ins by one user at one venue are collapsed to
/// the first, then users and venues with fewer than `min_posts` check-ins
/// are removed. Removing a venue can make two visits to another venue
/// adjacent, and removing either kind of entity can push the other below
/// the threshold, so both steps repeat until nothing changes. The output is
/// sorted by user, then timestamp (stable for equal timestamps).
pub fn preprocess(
    checkins: &[CheckIn],
    cfg: &PreprocessConfig,
) -> (Vec<CheckIn>, PreprocessReport) {
    let mut report = PreprocessReport {
        input: checkins.len(),
        ..Default::default()
    };
    let mut cur: Vec<CheckIn> = checkins.to_vec();
    cur.sort_by(|a, b| {
        a.user_id
            .cmp(&b.user_id)
            .then_with(|| a.timestamp.cmp(&b.timestamp))
    });

    loop {
        report.rounds += 1;
        let start = cur.len();
        cur = collapse_repeats(cur, cfg.max_gap);
        report.repeats_removed += start - cur.len();

        let before = cur.len();
        cur = drop_sparse(cur, cfg.min_posts);
        report.sparse_removed += before - cur.len();

        if cur.len() == start {
            break;
        }
    }
    report.output = cur.len();
    (cur, report)
}

fn collapse_repeats(sorted: Vec<CheckIn>, max_gap: Option<Duration>) -> Vec<CheckIn> {
    let mut keep = Vec::with_capacity(sorted.len());
    for (i, c) in sorted.iter().enumerate() {
        let repeat = i > 0 && {
            let p = &sorted[i - 1];
            p.user_id == c.user_id
                && p.venue_id == c.venue_id
                && max_gap.is_none_or(|g| c.timestamp - p.timestamp <= g)
        };
        keep.push(!repeat);
    }
    sorted
        .into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c))
        .collect()
}

fn drop_sparse(cur: Vec<CheckIn>, min_posts: usize) -> Vec<CheckIn> {
    if min_posts <= 1 {
        return cur;
    }
    let mut users: HashMap<&str, usize> = HashMap::new();
    let mut venues: HashMap<&str, usize> = HashMap::new();
    for c in &cur {
        *users.entry(&c.user_id).or_default() += 1;
        *venues.entry(&c.venue_id).or_default() += 1;
    }
    let keep: Vec<bool> = cur
        .iter()
        .map(|c| users[c.user_id.as_str()] >= min_posts && venues[c.venue_id.as_str()] >= min_posts)
        .collect();
    cur.into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c))
        .collect()
}
