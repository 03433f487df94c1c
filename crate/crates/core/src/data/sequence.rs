use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::checkin::{CheckIn, Clock, YearMonth};
use super::geo::NeighborhoodMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordKind {
    Feature,
    Location,
}

impl WordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            WordKind::Feature => "feature",
            WordKind::Location => "location",
        }
    }
}

impl fmt::Display for WordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WordKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature" => Ok(WordKind::Feature),
            "location" => Ok(WordKind::Location),
            _ => Err(Error::arg(format!("unknown word kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grouping {
    User,
    Neighborhood,
}

impl FromStr for Grouping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user" => Ok(Grouping::User),
            "neighborhood" => Ok(Grouping::Neighborhood),
            _ => Err(Error::arg(format!("unknown grouping `{s}`"))),
        }
    }
}

/// Parallel feature-word / location-word streams for one entity in one
/// calendar month, in chronological order.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub entity_id: String,
    pub month: YearMonth,
    pub feature_words: Vec<String>,
    pub location_words: Vec<String>,
    pub coordinates: Vec<(f64, f64)>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.feature_words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.feature_words.is_empty()
    }

    pub fn words(&self, kind: WordKind) -> &[String] {
        match kind {
            WordKind::Feature => &self.feature_words,
            WordKind::Location => &self.location_words,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SequenceSet {
    pub sequences: Vec<TokenSequence>,
    /// Check-ins that fell outside every neighborhood polygon.
    pub dropped_outside: usize,
}

/// Neighborhood index for every check-in, `None` when outside all polygons.
pub fn assign_neighborhoods(checkins: &[CheckIn], map: &NeighborhoodMap) -> Vec<Option<usize>> {
    checkins.iter().map(|c| map.locate(c.lat, c.lon)).collect()
}

/// Builds one sequence per (entity, month). Sequences come out sorted by
/// entity id, then month.
pub fn build_sequences(
    checkins: &[CheckIn],
    grouping: Grouping,
    map: Option<&NeighborhoodMap>,
    clock: &Clock,
) -> Result<SequenceSet> {
    let mut groups: BTreeMap<(String, YearMonth), Vec<&CheckIn>> = BTreeMap::new();
    let mut dropped = 0;
    match grouping {
        Grouping::User => {
            for c in checkins {
                groups
                    .entry((c.user_id.clone(), c.month(clock)))
                    .or_default()
                    .push(c);
            }
        }
        Grouping::Neighborhood => {
            let map = map.ok_or_else(|| {
                Error::Config("neighborhood grouping requires a neighborhood map".into())
            })?;
            for c in checkins {
                match map.lookup(c.lat, c.lon) {
                    Some(id) => groups
                        .entry((id.to_string(), c.month(clock)))
                        .or_default()
                        .push(c),
                    None => dropped += 1,
                }
            }
        }
    }
    let sequences = groups
        .into_iter()
        .map(|((entity_id, month), mut cs)| {
            cs.sort_by_key(|c| c.timestamp);
            TokenSequence {
                entity_id,
                month,
                feature_words: cs.iter().map(|c| c.feature_word(clock)).collect(),
                location_words: cs.iter().map(|c| c.venue_id.clone()).collect(),
                coordinates: cs.iter().map(|c| c.coords()).collect(),
            }
        })
        .collect();
    Ok(SequenceSet {
        sequences,
        dropped_outside: dropped,
    })
}
