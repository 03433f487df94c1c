//! Ten functional timeslots: five daily buckets, split by weekday and weekend.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Timeslot {
    Morning,
    Noon,
    Afternoon,
    Evening,
    Night,
    WeekendMorning,
    WeekendNoon,
    WeekendAfternoon,
    WeekendEvening,
    WeekendNight,
}

impl Timeslot {
    pub const ALL: [Timeslot; 10] = [
        Timeslot::Morning,
        Timeslot::Noon,
        Timeslot::Afternoon,
        Timeslot::Evening,
        Timeslot::Night,
        Timeslot::WeekendMorning,
        Timeslot::WeekendNoon,
        Timeslot::WeekendAfternoon,
        Timeslot::WeekendEvening,
        Timeslot::WeekendNight,
    ];

    /// Buckets a local clock time. Bucket bounds are inclusive at minute
    /// granularity, so 10:59:59 is still Morning.
    ///
    /// | bucket    | local time      |
    /// |-----------|-----------------|
    /// | Morning   | 06:00 – 10:59   |
    /// | Noon      | 11:00 – 13:59   |
    /// | Afternoon | 14:00 – 17:59   |
    /// | Evening   | 18:00 – 21:59   |
    /// | Night     | 22:00 – 05:59   |
    ///
    /// Saturdays and Sundays map to the `Weekend*` variants. A Saturday
    /// 02:00 check-in is `WeekendNight` even though it belongs to the night
    /// that started on Friday; the calendar day of the clock reading decides.
    pub fn from_local(local: &NaiveDateTime) -> Timeslot {
        let weekend = matches!(local.weekday(), Weekday::Sat | Weekday::Sun);
        let hour = local.hour();
        let idx = match hour {
            6..=10 => 0,
            11..=13 => 1,
            14..=17 => 2,
            18..=21 => 3,
            _ => 4,
        };
        Timeslot::ALL[idx + if weekend { 5 } else { 0 }]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_weekend(self) -> bool {
        self.index() >= 5
    }

    /// Morning, Noon and Afternoon (and their weekend twins).
    pub fn is_daytime(self) -> bool {
        self.index() % 5 < 3
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Timeslot::Morning => "Morning",
            Timeslot::Noon => "Noon",
            Timeslot::Afternoon => "Afternoon",
            Timeslot::Evening => "Evening",
            Timeslot::Night => "Night",
            Timeslot::WeekendMorning => "WeekendMorning",
            Timeslot::WeekendNoon => "WeekendNoon",
            Timeslot::WeekendAfternoon => "WeekendAfternoon",
            Timeslot::WeekendEvening => "WeekendEvening",
            Timeslot::WeekendNight => "WeekendNight",
        }
    }
}

impl fmt::Display for Timeslot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Timeslot {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Timeslot::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::arg(format!("unknown timeslot `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, NaiveDate};

    fn at(y: i32, m: u32, d: u32, h: u32, min: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, m, d)
            .unwrap()
            .and_hms_opt(h, min, 0)
            .unwrap()
    }

    #[test]
    fn table_examples() {
        // 2010-03-02 is a Tuesday, 2010-03-06 a Saturday, 2010-03-01 a Monday.
        assert_eq!(Timeslot::from_local(&at(2010, 3, 2, 9, 30)), Timeslot::Morning);
        assert_eq!(
            Timeslot::from_local(&at(2010, 3, 6, 23, 15)),
            Timeslot::WeekendNight
        );
        assert_eq!(Timeslot::from_local(&at(2010, 3, 1, 5, 59)), Timeslot::Night);
    }

    #[test]
    fn bucket_edges() {
        let tue = |h, m| Timeslot::from_local(&at(2010, 3, 2, h, m));
        assert_eq!(tue(6, 0), Timeslot::Morning);
        assert_eq!(tue(10, 59), Timeslot::Morning);
        assert_eq!(tue(11, 0), Timeslot::Noon);
        assert_eq!(tue(13, 59), Timeslot::Noon);
        assert_eq!(tue(14, 0), Timeslot::Afternoon);
        assert_eq!(tue(17, 59), Timeslot::Afternoon);
        assert_eq!(tue(18, 0), Timeslot::Evening);
        assert_eq!(tue(21, 59), Timeslot::Evening);
        assert_eq!(tue(22, 0), Timeslot::Night);
        assert_eq!(tue(0, 0), Timeslot::Night);
        let last_second = at(2010, 3, 2, 10, 59) + Duration::seconds(59);
        assert_eq!(Timeslot::from_local(&last_second), Timeslot::Morning);
    }

    #[test]
    fn every_minute_of_the_week_lands_in_one_slot() {
        let start = at(2010, 3, 1, 0, 0);
        let mut counts = [0usize; 10];
        for minute in 0..7 * 24 * 60 {
            let t = start + Duration::minutes(minute);
            let slot = Timeslot::from_local(&t);
            counts[slot.index()] += 1;
            let weekend = matches!(t.weekday(), Weekday::Sat | Weekday::Sun);
            assert_eq!(slot.is_weekend(), weekend);
        }
        // weekday buckets over 5 days, weekend buckets over 2 days
        let per_day = [5 * 60, 3 * 60, 4 * 60, 4 * 60, 8 * 60];
        for (i, c) in counts.iter().enumerate() {
            let days = if i < 5 { 5 } else { 2 };
            assert_eq!(*c, per_day[i % 5] * days, "slot {i}");
        }
        assert_eq!(counts.iter().sum::<usize>(), 7 * 24 * 60);
    }

    #[test]
    fn parse_round_trip() {
        for t in Timeslot::ALL {
            assert_eq!(t.as_str().parse::<Timeslot>().unwrap(), t);
        }
        assert!("Brunch".parse::<Timeslot>().is_err());
    }
}
