//! Spatio-temporal embedding similarity (STES) recommendation.
//!
//! For a user in a timeslot, categories are ranked by how similar the
//! user's slot vector is to the user's own check-ins of each category. The
//! top `C` categories define the candidate venues, and each candidate is
//! scored by cosine similarity times a category decay and a spatial decay.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{haversine_km, Timeslot};
use crate::error::{Error, Result};
use crate::profiles::{
    location_profiles, overall_profile, user_profiles, CheckInVector, CheckInVectorMode,
    LocationProfile, UserTimeslotProfile,
};

/// How one category's check-in similarities collapse into a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CategoryAggregator {
    #[default]
    Max,
    Mean,
}

impl FromStr for CategoryAggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(CategoryAggregator::Max),
            "mean" => Ok(CategoryAggregator::Mean),
            _ => Err(Error::arg(format!("unknown category aggregator `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StesConfig {
    /// Number of preferred categories kept (`C`).
    pub categories: usize,
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub ks: Vec<usize>,
    pub aggregator: CategoryAggregator,
}

impl Default for StesConfig {
    fn default() -> Self {
        StesConfig {
            categories: 15,
            a1: 0.4,
            a2: 0.025,
            b1: 1.0,
            b2: 0.95,
            ks: vec![1, 5, 10],
            aggregator: CategoryAggregator::Max,
        }
    }
}

impl StesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.categories < 1 {
            return Err(Error::Config("categories (C) must be at least 1".into()));
        }
        if !(self.a1 > 0.0 && self.b1 > 0.0) {
            return Err(Error::Config("a1 and b1 must be positive".into()));
        }
        if !(self.a2 >= 0.0 && self.b2 >= 0.0) {
            return Err(Error::Config("a2 and b2 must be non-negative".into()));
        }
        if self.ks.iter().any(|&k| k == 0) {
            return Err(Error::Config("every k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn max_k(&self) -> usize {
        self.ks.iter().copied().max().unwrap_or(10)
    }
}

/// Reference point for the spatial decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    /// The user's coordinate centroid in the query timeslot.
    #[default]
    Centroid,
    /// The user's most recent training check-in.
    MostRecent,
}

/// STES and its ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Variant {
    #[default]
    Stes,
    /// Check-ins represented by feature words only.
    V1,
    /// Check-ins represented by location words only.
    V2,
    /// Spatial decay measured from the most recent check-in.
    V3,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Stes, Variant::V1, Variant::V2, Variant::V3];

    pub fn vector_mode(self) -> CheckInVectorMode {
        match self {
            Variant::V1 => CheckInVectorMode::FeatureOnly,
            Variant::V2 => CheckInVectorMode::LocationOnly,
            Variant::Stes | Variant::V3 => CheckInVectorMode::Sum,
        }
    }

    pub fn anchor(self) -> Anchor {
        match self {
            Variant::V3 => Anchor::MostRecent,
            _ => Anchor::Centroid,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Stes => "stes",
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::V3 => "v3",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stes" => Ok(Variant::Stes),
            "v1" => Ok(Variant::V1),
            "v2" => Ok(Variant::V2),
            "v3" => Ok(Variant::V3),
            _ => Err(Error::arg(format!("unknown variant `{s}`"))),
        }
    }
}

static ZERO_VECTOR_WARNINGS: AtomicU64 = AtomicU64::new(0);

/// How many times [`cosine`] met a zero vector since process start.
pub fn zero_vector_warnings() -> u64 {
    ZERO_VECTOR_WARNINGS.load(AtomicOrdering::Relaxed)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cosine_with_norms(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        ZERO_VECTOR_WARNINGS.fetch_add(1, AtomicOrdering::Relaxed);
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Cosine similarity. A zero vector has similarity 0 to everything and
/// bumps [`zero_vector_warnings`].
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    cosine_with_norms(a, norm(a), b, norm(b))
}

/// Category decay `a1·exp(-a2·rank)` and spatial decay `b1·exp(-b2·dist)`.
pub fn decay_factors(rank: usize, dist_km: f64, cfg: &StesConfig) -> (f64, f64) {
    (
        cfg.a1 * (-cfg.a2 * rank as f64).exp(),
        cfg.b1 * (-cfg.b2 * dist_km).exp(),
    )
}

/// Ranks categories by the aggregated similarity between `user` and the
/// user's check-ins of each category. Ties go to the smaller category
/// name; at most `c` categories are returned.
pub fn rank_categories<'a>(
    user: &[f64],
    checkins: impl IntoIterator<Item = (&'a str, &'a [f64])>,
    c: usize,
    aggregator: CategoryAggregator,
) -> Vec<String> {
    let nu = norm(user);
    // category -> (max, sum, count)
    let mut acc: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for (cat, v) in checkins {
        let s = cosine_with_norms(user, nu, v, norm(v));
        let e = acc.entry(cat).or_insert((f64::NEG_INFINITY, 0.0, 0));
        e.0 = e.0.max(s);
        e.1 += s;
        e.2 += 1;
    }
    let mut scored: Vec<(&str, f64)> = acc
        .into_iter()
        .map(|(cat, (max, sum, n))| {
            let s = match aggregator {
                CategoryAggregator::Max => max,
                CategoryAggregator::Mean => sum / n as f64,
            };
            (cat, s + 0.0)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    scored.truncate(c);
    scored.into_iter().map(|(c, _)| c.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredVenue {
    pub venue_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub user_id: String,
    pub timeslot: Timeslot,
    /// The user had no check-ins in this timeslot; the all-check-in
    /// profile was used instead.
    pub fallback: bool,
    pub venues: Vec<ScoredVenue>,
}

#[derive(Debug, Clone)]
struct UserState {
    slots: [Option<UserTimeslotProfile>; 10],
    overall: UserTimeslotProfile,
    /// Distinct (category, vector) pairs of the user's check-ins.
    checkins: Vec<(String, Vec<f64>)>,
    last: (f64, f64),
}

/// Venue and user profiles ready for querying. Immutable after building.
#[derive(Debug, Clone)]
pub struct StesModel {
    venues: Vec<LocationProfile>,
    venue_norms: Vec<f64>,
    by_category: BTreeMap<String, Vec<usize>>,
    users: BTreeMap<String, UserState>,
}

impl StesModel {
    /// Builds profiles from training check-in vectors, which must be in
    /// chronological order within each user (the last one per user is the
    /// most recent).
    pub fn build(checkins: &[CheckInVector]) -> Result<Self> {
        if checkins.is_empty() {
            return Err(Error::arg("no check-ins to build profiles from"));
        }
        let venues = location_profiles(checkins);
        let venue_norms = venues.iter().map(|v| norm(&v.vector)).collect();
        let mut by_category: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, v) in venues.iter().enumerate() {
            by_category.entry(v.category.clone()).or_default().push(i);
        }
        let mut per_user: BTreeMap<&str, Vec<CheckInVector>> = BTreeMap::new();
        for c in checkins {
            per_user.entry(c.user_id.as_str()).or_default().push(c.clone());
        }
        let users = per_user
            .into_par_iter()
            .map(|(u, cs)| {
                let mut slots: [Option<UserTimeslotProfile>; 10] = Default::default();
                for p in user_profiles(u, &cs) {
                    let i = p.timeslot.expect("slot profile").index();
                    slots[i] = Some(p);
                }
                let overall = overall_profile(u, &cs).expect("non-empty");
                let mut seen = HashSet::new();
                let mut distinct = Vec::new();
                for c in &cs {
                    let bits: Vec<u64> = c.vector.iter().map(|x| x.to_bits()).collect();
                    if seen.insert((c.category.as_str(), bits)) {
                        distinct.push((c.category.clone(), c.vector.clone()));
                    }
                }
                let last = cs.last().expect("non-empty").coords;
                let state = UserState {
                    slots,
                    overall,
                    checkins: distinct,
                    last,
                };
                (u.to_string(), state)
            })
            .collect();
        Ok(StesModel {
            venues,
            venue_norms,
            by_category,
            users,
        })
    }

    pub fn venues(&self) -> &[LocationProfile] {
        &self.venues
    }

    pub fn has_user(&self, user: &str) -> bool {
        self.users.contains_key(user)
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.users.keys().map(String::as_str)
    }

    pub fn has_venue(&self, venue: &str) -> bool {
        self.venues
            .binary_search_by(|v| v.venue_id.as_str().cmp(venue))
            .is_ok()
    }

    /// The profile used for a query and whether it is the fallback.
    pub fn query_profile(&self, user: &str, slot: Timeslot) -> Result<(&UserTimeslotProfile, bool)> {
        let state = self
            .users
            .get(user)
            .ok_or_else(|| Error::Lookup(format!("unknown user `{user}`")))?;
        Ok(match &state.slots[slot.index()] {
            Some(p) => (p, false),
            None => (&state.overall, true),
        })
    }

    /// Preferred categories of a user in a timeslot, best first.
    pub fn preferred_categories(&self, user: &str, slot: Timeslot, cfg: &StesConfig) -> Result<Vec<String>> {
        let (profile, _) = self.query_profile(user, slot)?;
        let state = &self.users[user];
        Ok(rank_categories(
            &profile.vector,
            state.checkins.iter().map(|(c, v)| (c.as_str(), v.as_slice())),
            cfg.categories,
            cfg.aggregator,
        ))
    }

    pub fn recommend(
        &self,
        user: &str,
        slot: Timeslot,
        k: usize,
        cfg: &StesConfig,
        anchor: Anchor,
    ) -> Result<Recommendation> {
        let (profile, fallback) = self.query_profile(user, slot)?;
        let state = &self.users[user];
        let cats = self.preferred_categories(user, slot, cfg)?;
        let reference = match anchor {
            Anchor::Centroid => profile.centroid,
            Anchor::MostRecent => state.last,
        };
        let nu = norm(&profile.vector);
        let mut scored: Vec<(usize, f64)> = Vec::new();
        for (rank, cat) in cats.iter().enumerate() {
            let Some(members) = self.by_category.get(cat) else {
                continue;
            };
            for &i in members {
                let v = &self.venues[i];
                let sim = cosine_with_norms(&profile.vector, nu, &v.vector, self.venue_norms[i]);
                let (cd, sd) = decay_factors(rank, haversine_km(v.coords, reference), cfg);
                // adding 0.0 folds -0.0 into +0.0 so total_cmp sees them as tied
                scored.push((i, sim * cd * sd + 0.0));
            }
        }
        // venues are sorted by id, so the index breaks ties by id
        let order = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
            b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        Ok(Recommendation {
            user_id: user.to_string(),
            timeslot: slot,
            fallback,
            venues: scored
                .into_iter()
                .map(|(i, score)| ScoredVenue {
                    venue_id: self.venues[i].venue_id.clone(),
                    score,
                })
                .collect(),
        })
    }

    /// Runs independent queries in parallel; results keep query order.
    pub fn recommend_batch(
        &self,
        queries: &[(String, Timeslot)],
        k: usize,
        cfg: &StesConfig,
        anchor: Anchor,
    ) -> Vec<Result<Recommendation>> {
        queries
            .par_iter()
            .map(|(u, s)| self.recommend(u, *s, k, cfg, anchor))
            .collect()
    }
}
