//! Check-in, location, user and neighborhood profiles built from word
//! vectors.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{CheckIn, Clock, NeighborhoodMap, Timeslot, YearMonth};
use crate::embed::{context_mean, EmbeddingSpace};
use crate::error::{Error, Result};

/// How a check-in's feature-word and location-word vectors are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckInVectorMode {
    #[default]
    Sum,
    Average,
    Concat,
    FeatureOnly,
    LocationOnly,
}

impl CheckInVectorMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckInVectorMode::Sum => "sum",
            CheckInVectorMode::Average => "average",
            CheckInVectorMode::Concat => "concat",
            CheckInVectorMode::FeatureOnly => "feature_only",
            CheckInVectorMode::LocationOnly => "location_only",
        }
    }

    pub fn needs_feature(self) -> bool {
        self != CheckInVectorMode::LocationOnly
    }

    pub fn needs_location(self) -> bool {
        self != CheckInVectorMode::FeatureOnly
    }
}

impl fmt::Display for CheckInVectorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CheckInVectorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sum" => CheckInVectorMode::Sum,
            "average" | "avg" => CheckInVectorMode::Average,
            "concat" => CheckInVectorMode::Concat,
            "feature_only" | "feature" => CheckInVectorMode::FeatureOnly,
            "location_only" | "location" => CheckInVectorMode::LocationOnly,
            _ => return Err(Error::arg(format!("unknown check-in vector mode `{s}`"))),
        })
    }
}

pub fn checkin_vector(fw: &[f64], gw: &[f64], mode: CheckInVectorMode) -> Result<Vec<f64>> {
    let same_dim = || {
        if fw.len() != gw.len() {
            Err(Error::arg(format!(
                "feature vector has {} dims, location vector {}",
                fw.len(),
                gw.len()
            )))
        } else {
            Ok(())
        }
    };
    Ok(match mode {
        CheckInVectorMode::Sum => {
            same_dim()?;
            fw.iter().zip(gw).map(|(a, b)| a + b).collect()
        }
        CheckInVectorMode::Average => {
            same_dim()?;
            fw.iter().zip(gw).map(|(a, b)| 0.5 * (a + b)).collect()
        }
        CheckInVectorMode::Concat => fw.iter().chain(gw).copied().collect(),
        CheckInVectorMode::FeatureOnly => fw.to_vec(),
        CheckInVectorMode::LocationOnly => gw.to_vec(),
    })
}

/// A check-in with its combined vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckInVector {
    pub user_id: String,
    pub venue_id: String,
    pub category: String,
    pub timeslot: Timeslot,
    pub month: YearMonth,
    pub coords: (f64, f64),
    pub vector: Vec<f64>,
}

/// Looks up the word vectors of check-ins and combines them.
#[derive(Debug, Clone, Copy)]
pub struct CheckInEmbedder<'a> {
    feature: Option<&'a EmbeddingSpace>,
    location: Option<&'a EmbeddingSpace>,
    mode: CheckInVectorMode,
    clock: Clock,
}

impl<'a> CheckInEmbedder<'a> {
    /// Fails when the mode needs a space that was not supplied.
    pub fn new(
        feature: Option<&'a EmbeddingSpace>,
        location: Option<&'a EmbeddingSpace>,
        mode: CheckInVectorMode,
        clock: Clock,
    ) -> Result<Self> {
        if mode.needs_feature() && feature.is_none() {
            return Err(Error::Config(format!("mode `{mode}` needs a feature-word model")));
        }
        if mode.needs_location() && location.is_none() {
            return Err(Error::Config(format!("mode `{mode}` needs a location-word model")));
        }
        if let (true, true, Some(f), Some(l)) =
            (mode.needs_feature(), mode.needs_location(), feature, location)
        {
            if mode != CheckInVectorMode::Concat && f.dim != l.dim {
                return Err(Error::Config(format!(
                    "feature model has {} dims, location model {}",
                    f.dim, l.dim
                )));
            }
        }
        Ok(CheckInEmbedder {
            feature,
            location,
            mode,
            clock,
        })
    }

    pub fn mode(&self) -> CheckInVectorMode {
        self.mode
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    /// `None` when a needed token is out of vocabulary.
    pub fn embed(&self, c: &CheckIn) -> Option<CheckInVector> {
        let slot = c.timeslot(&self.clock);
        let empty: &[f64] = &[];
        let fw = match (self.mode.needs_feature(), self.feature) {
            (true, Some(f)) => f.vector(&crate::data::feature_word(&c.category, slot))?,
            _ => empty,
        };
        let gw = match (self.mode.needs_location(), self.location) {
            (true, Some(l)) => l.vector(&c.venue_id)?,
            _ => empty,
        };
        let vector = checkin_vector(fw, gw, self.mode).ok()?;
        Some(CheckInVector {
            user_id: c.user_id.clone(),
            venue_id: c.venue_id.clone(),
            category: c.category.clone(),
            timeslot: slot,
            month: c.month(&self.clock),
            coords: c.coords(),
            vector,
        })
    }

    /// Embeds every check-in it can; returns the vectors and the number of
    /// out-of-vocabulary check-ins skipped.
    pub fn embed_all(&self, checkins: &[CheckIn]) -> (Vec<CheckInVector>, usize) {
        let mut out = Vec::with_capacity(checkins.len());
        for c in checkins {
            if let Some(v) = self.embed(c) {
                out.push(v);
            }
        }
        let skipped = checkins.len() - out.len();
        (out, skipped)
    }
}

fn mean_coords<'a>(coords: impl Iterator<Item = &'a (f64, f64)>) -> (f64, f64) {
    let (mut lat, mut lon, mut n) = (0.0, 0.0, 0usize);
    for &(a, b) in coords {
        lat += a;
        lon += b;
        n += 1;
    }
    (lat / n as f64, lon / n as f64)
}

fn mean_of(vectors: &[&CheckInVector]) -> Option<Vec<f64>> {
    let rows: Vec<&[f64]> = vectors.iter().map(|c| c.vector.as_slice()).collect();
    context_mean(&rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocationProfile {
    pub venue_id: String,
    /// Most frequent category among the venue's check-ins, ties to the
    /// lexicographically smallest.
    pub category: String,
    pub vector: Vec<f64>,
    pub count: usize,
    pub coords: (f64, f64),
}

/// Mean of one venue's check-in vectors. `None` for an empty list.
pub fn location_profile(venue_id: &str, checkins: &[&CheckInVector]) -> Option<LocationProfile> {
    let vector = mean_of(checkins)?;
    let mut cats: BTreeMap<&str, usize> = BTreeMap::new();
    for c in checkins {
        *cats.entry(c.category.as_str()).or_default() += 1;
    }
    // BTreeMap iterates in ascending order, so max_by_key's last-wins rule
    // needs the reverse to pick the smallest name among equals
    let category = cats
        .iter()
        .rev()
        .max_by_key(|(_, &n)| n)
        .map(|(c, _)| c.to_string())
        .expect("non-empty");
    Some(LocationProfile {
        venue_id: venue_id.to_string(),
        category,
        vector,
        count: checkins.len(),
        coords: mean_coords(checkins.iter().map(|c| &c.coords)),
    })
}

/// Profiles of every venue, sorted by venue id.
pub fn location_profiles(checkins: &[CheckInVector]) -> Vec<LocationProfile> {
    let mut by_venue: BTreeMap<&str, Vec<&CheckInVector>> = BTreeMap::new();
    for c in checkins {
        by_venue.entry(c.venue_id.as_str()).or_default().push(c);
    }
    by_venue
        .into_iter()
        .filter_map(|(v, cs)| location_profile(v, &cs))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserTimeslotProfile {
    pub user_id: String,
    /// `None` for the all-check-in profile.
    pub timeslot: Option<Timeslot>,
    pub vector: Vec<f64>,
    pub centroid: (f64, f64),
    pub count: usize,
}

/// One profile per non-empty timeslot, in timeslot order. Check-ins of
/// other users are ignored.
pub fn user_profiles(user_id: &str, checkins: &[CheckInVector]) -> Vec<UserTimeslotProfile> {
    let mut slots: [Vec<&CheckInVector>; 10] = Default::default();
    for c in checkins.iter().filter(|c| c.user_id == user_id) {
        slots[c.timeslot.index()].push(c);
    }
    Timeslot::ALL
        .iter()
        .zip(slots)
        .filter_map(|(&slot, cs)| {
            Some(UserTimeslotProfile {
                user_id: user_id.to_string(),
                timeslot: Some(slot),
                vector: mean_of(&cs)?,
                centroid: mean_coords(cs.iter().map(|c| &c.coords)),
                count: cs.len(),
            })
        })
        .collect()
}

/// The profile over all of a user's check-ins, used when the queried
/// timeslot has none.
pub fn overall_profile(user_id: &str, checkins: &[CheckInVector]) -> Option<UserTimeslotProfile> {
    let cs: Vec<&CheckInVector> = checkins.iter().filter(|c| c.user_id == user_id).collect();
    Some(UserTimeslotProfile {
        user_id: user_id.to_string(),
        timeslot: None,
        vector: mean_of(&cs)?,
        centroid: mean_coords(cs.iter().map(|c| &c.coords)),
        count: cs.len(),
    })
}

/// Which timeslots contribute to a neighborhood profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotFilter {
    #[default]
    All,
    Day,
    Night,
}

impl SlotFilter {
    pub fn admits(self, slot: Timeslot) -> bool {
        match self {
            SlotFilter::All => true,
            SlotFilter::Day => slot.is_daytime(),
            SlotFilter::Night => !slot.is_daytime(),
        }
    }
}

impl FromStr for SlotFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(SlotFilter::All),
            "day" => Ok(SlotFilter::Day),
            "night" => Ok(SlotFilter::Night),
            _ => Err(Error::arg(format!("unknown slot filter `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodProfile {
    pub neighborhood_id: String,
    /// `None` when all months are pooled.
    pub month: Option<YearMonth>,
    pub vector: Vec<f64>,
    pub centroid: (f64, f64),
    pub count: usize,
}

/// Mean check-in vector per neighborhood (and per month when `monthly`).
/// Check-ins outside every polygon are skipped. Output is sorted by
/// neighborhood id, then month.
pub fn neighborhood_profiles(
    checkins: &[CheckInVector],
    map: &NeighborhoodMap,
    monthly: bool,
    filter: SlotFilter,
) -> Vec<NeighborhoodProfile> {
    let mut groups: BTreeMap<(&str, Option<YearMonth>), Vec<&CheckInVector>> = BTreeMap::new();
    for c in checkins.iter().filter(|c| filter.admits(c.timeslot)) {
        if let Some(id) = map.lookup(c.coords.0, c.coords.1) {
            let month = monthly.then_some(c.month);
            groups.entry((id, month)).or_default().push(c);
        }
    }
    groups
        .into_iter()
        .filter_map(|((id, month), cs)| {
            Some(NeighborhoodProfile {
                neighborhood_id: id.to_string(),
                month,
                vector: mean_of(&cs)?,
                centroid: mean_coords(cs.iter().map(|c| &c.coords)),
                count: cs.len(),
            })
        })
        .collect()
}

/// One line of a profile export.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRecord {
    pub entity_id: String,
    /// Timeslot, month, or `-`.
    pub key: String,
    pub vector: Vec<f64>,
    pub coords: (f64, f64),
}

impl From<&LocationProfile> for ProfileRecord {
    fn from(p: &LocationProfile) -> Self {
        ProfileRecord {
            entity_id: p.venue_id.clone(),
            key: "-".into(),
            vector: p.vector.clone(),
            coords: p.coords,
        }
    }
}

impl From<&UserTimeslotProfile> for ProfileRecord {
    fn from(p: &UserTimeslotProfile) -> Self {
        ProfileRecord {
            entity_id: p.user_id.clone(),
            key: p.timeslot.map_or("-".into(), |s| s.to_string()),
            vector: p.vector.clone(),
            coords: p.centroid,
        }
    }
}

impl From<&NeighborhoodProfile> for ProfileRecord {
    fn from(p: &NeighborhoodProfile) -> Self {
        ProfileRecord {
            entity_id: p.neighborhood_id.clone(),
            key: p.month.map_or("-".into(), |m| m.to_string()),
            vector: p.vector.clone(),
            coords: p.centroid,
        }
    }
}

/// `entity <TAB> key <TAB> space-separated floats <TAB> lat <TAB> lon`.
pub fn write_profiles<'a>(
    mut w: impl Write,
    records: impl IntoIterator<Item = &'a ProfileRecord>,
) -> Result<()> {
    for r in records {
        let floats: Vec<String> = r.vector.iter().map(|x| x.to_string()).collect();
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            r.entity_id,
            r.key,
            floats.join(" "),
            r.coords.0,
            r.coords.1
        )?;
    }
    Ok(())
}

pub fn read_profiles(r: impl BufRead) -> Result<Vec<ProfileRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(Error::parse(i + 1, format!("expected 5 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(i + 1, format!("bad number `{s}`")));
        let vector = f[2]
            .split(' ')
            .filter(|s| !s.is_empty())
            .map(num)
            .collect::<Result<Vec<_>>>()?;
        out.push(ProfileRecord {
            entity_id: f[0].to_string(),
            key: f[1].to_string(),
            vector,
            coords: (num(f[3])?, num(f[4])?),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Neighborhood, Polygon};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cv(user: &str, venue: &str, cat: &str, slot: Timeslot, coords: (f64, f64), v: Vec<f64>) -> CheckInVector {
        CheckInVector {
            user_id: user.into(),
            venue_id: venue.into(),
            category: cat.into(),
            timeslot: slot,
            month: YearMonth::new(2012, 5).unwrap(),
            coords,
            vector: v,
        }
    }

    #[test]
    fn combination_modes() {
        let (a, b) = ([1.0, 2.0], [3.0, 4.0]);
        assert_eq!(checkin_vector(&a, &b, CheckInVectorMode::Sum).unwrap(), vec![4.0, 6.0]);
        assert_eq!(checkin_vector(&a, &b, CheckInVectorMode::Average).unwrap(), vec![2.0, 3.0]);
        assert_eq!(
            checkin_vector(&a, &b, CheckInVectorMode::Concat).unwrap(),
            vec![1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(checkin_vector(&a, &b, CheckInVectorMode::FeatureOnly).unwrap(), a.to_vec());
        assert_eq!(checkin_vector(&a, &b, CheckInVectorMode::LocationOnly).unwrap(), b.to_vec());
        assert!(checkin_vector(&a, &[1.0], CheckInVectorMode::Sum).is_err());
        assert_eq!("avg".parse::<CheckInVectorMode>().unwrap(), CheckInVectorMode::Average);
    }

    #[test]
    fn location_profile_cases() {
        let one = cv("u", "v", "Bar", Timeslot::Night, (1.0, 2.0), vec![0.5, -1.0]);
        let p = location_profile("v", &[&one]).unwrap();
        assert_eq!(p.vector, one.vector);
        assert_eq!(p.count, 1);
        let neg = cv("u", "v", "Cafe", Timeslot::Night, (1.0, 2.0), vec![-0.5, 1.0]);
        let p = location_profile("v", &[&one, &neg]).unwrap();
        assert_eq!(p.vector, vec![0.0, 0.0]);
        assert_eq!(p.category, "Bar", "tie goes to the smaller name");
        assert!(location_profile("v", &[]).is_none());
    }

    #[test]
    fn location_profile_matches_mean_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vs: Vec<CheckInVector> = (0..100)
            .map(|_| {
                let v = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
                cv("u", "v", "Bar", Timeslot::Noon, (0.0, 0.0), v)
            })
            .collect();
        let refs: Vec<&CheckInVector> = vs.iter().collect();
        let p = location_profile("v", &refs).unwrap();
        for d in 0..8 {
            // compensated summation
            let (mut sum, mut comp) = (0.0f64, 0.0f64);
            for c in &vs {
                let x = c.vector[d];
                let t = sum + x;
                comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
                sum = t;
            }
            let oracle = (sum + comp) / 100.0;
            assert!((p.vector[d] - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn user_profiles_per_slot() {
        let cs = vec![
            cv("a", "v1", "Cafe", Timeslot::Morning, (0.0, 0.0), vec![1.0, 0.0]),
            cv("a", "v2", "Cafe", Timeslot::Morning, (2.0, 2.0), vec![0.0, 1.0]),
            cv("b", "v3", "Bar", Timeslot::Night, (9.0, 9.0), vec![5.0, 5.0]),
        ];
        let ps = user_profiles("a", &cs);
        assert_eq!(ps.len(), 1);
        assert_eq!(ps[0].timeslot, Some(Timeslot::Morning));
        assert_eq!(ps[0].centroid, (1.0, 1.0));
        assert_eq!(ps[0].vector, vec![0.5, 0.5]);
        assert_eq!(ps[0].count, 2);
        let all = overall_profile("a", &cs).unwrap();
        assert_eq!(all.timeslot, None);
        assert!(overall_profile("zzz", &cs).is_none());
    }

    #[test]
    fn at_most_ten_profiles_and_no_nan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cs: Vec<CheckInVector> = (0..300)
            .map(|_| {
                let slot = Timeslot::ALL[rng.gen_range(0..10)];
                cv("u", "v", "c", slot, (rng.gen(), rng.gen()), vec![rng.gen()])
            })
            .collect();
        let ps = user_profiles("u", &cs);
        assert!(ps.len() <= 10);
        assert!(ps.iter().all(|p| p.centroid.0.is_finite() && p.count >= 1));
    }

    #[test]
    fn neighborhood_grouping_and_filters() {
        let map = NeighborhoodMap::new(vec![
            Neighborhood { id: "west".into(), polygons: vec![Polygon::rect(0.0, 0.0, 1.0, 1.0)] },
            Neighborhood { id: "east".into(), polygons: vec![Polygon::rect(0.0, 1.0, 1.0, 2.0)] },
        ])
        .unwrap();
        let mut cs = vec![
            cv("a", "v1", "Cafe", Timeslot::Morning, (0.5, 0.5), vec![1.0]),
            cv("a", "v2", "Bar", Timeslot::Night, (0.5, 0.5), vec![3.0]),
            cv("a", "v3", "Bar", Timeslot::Night, (0.5, 1.5), vec![7.0]),
            cv("a", "v4", "Bar", Timeslot::Night, (5.0, 5.0), vec![100.0]),
        ];
        cs[1].month = YearMonth::new(2012, 6).unwrap();
        let pooled = neighborhood_profiles(&cs, &map, false, SlotFilter::All);
        assert_eq!(pooled.len(), 2);
        assert_eq!(pooled[0].neighborhood_id, "east");
        assert_eq!(pooled[1].vector, vec![2.0]);
        let monthly = neighborhood_profiles(&cs, &map, true, SlotFilter::All);
        assert_eq!(monthly.len(), 3);
        let day = neighborhood_profiles(&cs, &map, false, SlotFilter::Day);
        assert_eq!(day.len(), 1);
        assert_eq!(day[0].vector, vec![1.0]);
    }

    #[test]
    fn export_round_trip() {
        let cs = vec![cv("a", "v1", "Cafe", Timeslot::WeekendNoon, (40.7, -74.0), vec![0.1, -2.5e-9])];
        let mut recs: Vec<ProfileRecord> = user_profiles("a", &cs).iter().map(Into::into).collect();
        recs.extend(location_profiles(&cs).iter().map(ProfileRecord::from));
        let mut buf = Vec::new();
        write_profiles(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("a\tWeekendNoon\t"));
        assert_eq!(read_profiles(buf.as_slice()).unwrap(), recs);
    }

    fn vecs(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..n)
    }

    proptest! {
        #[test]
        fn sum_is_commutative(a in prop::collection::vec(-5.0f64..5.0, 4), b in prop::collection::vec(-5.0f64..5.0, 4)) {
            prop_assert_eq!(
                checkin_vector(&a, &b, CheckInVectorMode::Sum).unwrap(),
                checkin_vector(&b, &a, CheckInVectorMode::Sum).unwrap()
            );
        }

        #[test]
        fn profile_is_permutation_invariant_and_convex(vs in vecs(20), seed in 0u64..1000) {
            let cs: Vec<CheckInVector> = vs
                .iter()
                .map(|v| cv("u", "v", "c", Timeslot::Noon, (0.0, 0.0), v.clone()))
                .collect();
            let mut shuffled = cs.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let a = location_profile("v", &cs.iter().collect::<Vec<_>>()).unwrap();
            let b = location_profile("v", &shuffled.iter().collect::<Vec<_>>()).unwrap();
            for (x, y) in a.vector.iter().zip(&b.vector) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let max_in = vs.iter().map(|v| norm(v)).fold(0.0, f64::max);
            prop_assert!(norm(&a.vector) <= max_in + 1e-9);
        }
    }
}
