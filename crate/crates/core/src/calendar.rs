//! Calendar periods at monthly or yearly granularity.
//!
//! Dates are flat period indices (months since year 0, or the year number)
//! tagged with their granularity, so successor/difference arithmetic and
//! uniform-spacing checks are plain integer operations. A dataset never
//! mixes granularities; comparisons across granularities are a logic error
//! and only happen if that invariant is already broken.

use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Reporting granularity of a revenue series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Monthly,
    Yearly,
}

impl Granularity {
    /// Number of periods making up one year, which is also the natural
    /// year-over-year growth lag at this granularity.
    pub fn periods_per_year(self) -> u32 {
        match self {
            Granularity::Monthly => 12,
            Granularity::Yearly => 1,
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Granularity::Monthly => write!(f, "monthly"),
            Granularity::Yearly => write!(f, "yearly"),
        }
    }
}

/// A calendar period: a specific month (`YYYY-MM`) or year (`YYYY`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CalendarDate {
    granularity: Granularity,
    index: i64,
}

impl CalendarDate {
    pub fn monthly(year: i32, month: u32) -> Self {
        assert!((1..=12).contains(&month), "month out of range: {month}");
        CalendarDate {
            granularity: Granularity::Monthly,
            index: i64::from(year) * 12 + i64::from(month) - 1,
        }
    }

    pub fn yearly(year: i32) -> Self {
        CalendarDate {
            granularity: Granularity::Yearly,
            index: i64::from(year),
        }
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    /// The date `n` periods later (or earlier for negative `n`).
    pub fn plus(&self, n: i64) -> Self {
        CalendarDate {
            granularity: self.granularity,
            index: self.index + n,
        }
    }

    /// Signed number of periods from `earlier` to `self`.
    ///
    /// Panics if the granularities differ.
    pub fn periods_since(&self, earlier: &CalendarDate) -> i64 {
        assert_eq!(
            self.granularity, earlier.granularity,
            "cannot compare dates of different granularity"
        );
        self.index - earlier.index
    }
}

impl fmt::Display for CalendarDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.granularity {
            Granularity::Monthly => {
                let year = self.index.div_euclid(12);
                let month = self.index.rem_euclid(12) + 1;
                write!(f, "{year:04}-{month:02}")
            }
            Granularity::Yearly => write!(f, "{:04}", self.index),
        }
    }
}

/// Error from parsing a calendar date string.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid date {input:?}: expected YYYY (yearly) or YYYY-MM (monthly)")]
pub struct DateParseError {
    pub input: String,
}

impl FromStr for CalendarDate {
    type Err = DateParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || DateParseError {
            input: s.to_string(),
        };
        match s.split_once('-') {
            Some((year, month)) => {
                if year.len() != 4 || month.len() != 2 {
                    return Err(err());
                }
                let year: i32 = year.parse().map_err(|_| err())?;
                let month: u32 = month.parse().map_err(|_| err())?;
                if !(1..=12).contains(&month) {
                    return Err(err());
                }
                Ok(CalendarDate::monthly(year, month))
            }
            None => {
                if s.len() != 4 {
                    return Err(err());
                }
                let year: i32 = s.parse().map_err(|_| err())?;
                Ok(CalendarDate::yearly(year))
            }
        }
    }
}

impl Serialize for CalendarDate {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CalendarDate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(D::Error::custom)
    }
}
