use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use chrono::{DateTime, Datelike, FixedOffset, NaiveDate, NaiveDateTime, TimeZone};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};

use super::timeslot::Timeslot;
use crate::error::{Error, Result};

/// One visit: user `u` at venue `l` of category `f` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckIn {
    pub user_id: String,
    pub venue_id: String,
    pub category: String,
    pub timestamp: DateTime<FixedOffset>,
    pub lat: f64,
    pub lon: f64,
}

impl CheckIn {
    pub fn new(
        user_id: impl Into<String>,
        venue_id: impl Into<String>,
        category: impl Into<String>,
        timestamp: DateTime<FixedOffset>,
        lat: f64,
        lon: f64,
    ) -> Result<Self> {
        let c = CheckIn {
            user_id: user_id.into(),
            venue_id: venue_id.into(),
            category: category.into(),
            timestamp,
            lat,
            lon,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::arg(format!(
                "coordinates out of range: ({}, {})",
                self.lat, self.lon
            )));
        }
        if self.category.is_empty() {
            return Err(Error::arg("empty category"));
        }
        if self.user_id.is_empty() || self.venue_id.is_empty() {
            return Err(Error::arg("empty user or venue id"));
        }
        Ok(())
    }

    pub fn coords(&self) -> (f64, f64) {
        (self.lat, self.lon)
    }

    pub fn timeslot(&self, clock: &Clock) -> Timeslot {
        Timeslot::from_local(&clock.local(&self.timestamp))
    }

    pub fn month(&self, clock: &Clock) -> YearMonth {
        YearMonth::of(&clock.local(&self.timestamp))
    }

    pub fn feature_word(&self, clock: &Clock) -> String {
        feature_word(&self.category, self.timeslot(clock))
    }
}

/// Resolves the local civil time that timeslots and months are computed in.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Clock {
    /// Use the UTC offset stored with each timestamp.
    #[default]
    Recorded,
    Zone(Tz),
}

impl Clock {
    pub fn local(&self, ts: &DateTime<FixedOffset>) -> NaiveDateTime {
        match self {
            Clock::Recorded => ts.naive_local(),
            Clock::Zone(tz) => ts.with_timezone(tz).naive_local(),
        }
    }

    /// Attaches an offset to a timestamp that was written without one.
    fn resolve_naive(&self, naive: NaiveDateTime) -> Option<DateTime<FixedOffset>> {
        match self {
            Clock::Recorded => Some(naive.and_utc().fixed_offset()),
            Clock::Zone(tz) => tz
                .from_local_datetime(&naive)
                .earliest()
                .map(|t| t.fixed_offset()),
        }
    }

    pub fn parse_timestamp(&self, s: &str) -> Result<DateTime<FixedOffset>> {
        if let Ok(t) = DateTime::parse_from_rfc3339(s) {
            return Ok(t);
        }
        for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
            if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
                return self
                    .resolve_naive(naive)
                    .ok_or_else(|| Error::arg(format!("nonexistent local time `{s}`")));
            }
        }
        Err(Error::arg(format!("unparseable timestamp `{s}`")))
    }
}

impl FromStr for Clock {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() || s.eq_ignore_ascii_case("recorded") {
            return Ok(Clock::Recorded);
        }
        s.parse::<Tz>()
            .map(Clock::Zone)
            .map_err(|_| Error::Config(format!("unknown time zone `{s}`")))
    }
}

/// Calendar month in local time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::arg(format!("month {month} out of range")));
        }
        Ok(YearMonth { year, month })
    }

    pub fn of(local: &NaiveDateTime) -> Self {
        YearMonth {
            year: local.year(),
            month: local.month(),
        }
    }

    pub fn next(self) -> Self {
        if self.month == 12 {
            YearMonth {
                year: self.year + 1,
                month: 1,
            }
        } else {
            YearMonth {
                year: self.year,
                month: self.month + 1,
            }
        }
    }

    pub fn prev(self) -> Self {
        if self.month == 1 {
            YearMonth {
                year: self.year - 1,
                month: 12,
            }
        } else {
            YearMonth {
                year: self.year,
                month: self.month - 1,
            }
        }
    }

    pub fn first_day(self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.month, 1).expect("valid month")
    }

    pub fn days(self) -> u32 {
        let next = self.next().first_day();
        (next - self.first_day()).num_days() as u32
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (y, m) = s
            .split_once('-')
            .ok_or_else(|| Error::arg(format!("expected YYYY-MM, got `{s}`")))?;
        let year = y
            .parse()
            .map_err(|_| Error::arg(format!("bad year in `{s}`")))?;
        let month = m
            .parse()
            .map_err(|_| Error::arg(format!("bad month in `{s}`")))?;
        YearMonth::new(year, month)
    }
}

/// `category + "_" + timeslot`, e.g. `Bar_Evening`.
pub fn feature_word(category: &str, slot: Timeslot) -> String {
    format!("{category}_{slot}")
}

/// Splits a feature word at its last underscore. Categories may themselves
/// contain underscores; the timeslot suffix never does.
pub fn split_feature_word(token: &str) -> Option<(&str, Timeslot)> {
    let (cat, slot) = token.rsplit_once('_')?;
    if cat.is_empty() {
        return None;
    }
    Some((cat, slot.parse().ok()?))
}

/// Maps second-level categories to their top-level parent. Unknown
/// categories are their own parent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategoryHierarchy {
    parent: HashMap<String, String>,
}

impl CategoryHierarchy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, category: impl Into<String>, top_level: impl Into<String>) {
        self.parent.insert(category.into(), top_level.into());
    }

    pub fn top_level<'a>(&'a self, category: &'a str) -> &'a str {
        self.parent.get(category).map_or(category, String::as_str)
    }

    /// Reads `category <TAB> top_level` lines.
    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut h = CategoryHierarchy::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (c, t) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(i + 1, "expected `category<TAB>top_level`"))?;
            h.insert(c.trim(), t.trim());
        }
        Ok(h)
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        let mut pairs: Vec<_> = self.parent.iter().collect();
        pairs.sort();
        for (c, t) in pairs {
            writeln!(w, "{c}\t{t}")?;
        }
        Ok(())
    }
}

/// Reads check-ins in the six-column tab-separated format
/// `user venue category timestamp lat lon`. Lines starting with `#` and
/// blank lines are skipped.
pub fn read_checkins(reader: impl BufRead, clock: &Clock) -> Result<Vec<CheckIn>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(Error::parse(
                lineno,
                format!("expected 6 tab-separated columns, found {}", cols.len()),
            ));
        }
        let ts = clock
            .parse_timestamp(cols[3].trim())
            .map_err(|e| Error::parse(lineno, e.to_string()))?;
        let lat: f64 = cols[4]
            .trim()
            .parse()
            .map_err(|_| Error::parse(lineno, "bad latitude"))?;
        let lon: f64 = cols[5]
            .trim()
            .parse()
            .map_err(|_| Error::parse(lineno, "bad longitude"))?;
        let c = CheckIn::new(cols[0].trim(), cols[1].trim(), cols[2].trim(), ts, lat, lon)
            .map_err(|e| Error::parse(lineno, e.to_string()))?;
        out.push(c);
    }
    Ok(out)
}

pub fn write_checkins(mut w: impl Write, checkins: &[CheckIn]) -> Result<()> {
    for c in checkins {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            c.user_id,
            c.venue_id,
            c.category,
            c.timestamp.to_rfc3339(),
            c.lat,
            c.lon
        )?;
    }
    Ok(())
}
