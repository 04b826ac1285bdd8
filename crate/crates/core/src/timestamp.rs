use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, SecondsFormat, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A UTC instant whose text form is RFC 3339 with a trailing `Z`.
///
/// The canonical text prints whole seconds, then only as many fractional
/// digit groups (3, 6 or 9) as needed to show every non-zero digit.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(DateTime<Utc>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid timestamp {0:?}: expected RFC 3339 UTC with trailing 'Z'")]
pub struct TimestampParseError(pub String);

impl Timestamp {
    pub fn now() -> Self {
        // Millisecond resolution keeps the text form short and stable.
        let now = Utc::now();
        let millis = now.timestamp_millis();
        Timestamp(DateTime::from_timestamp_millis(millis).unwrap_or(now))
    }

    pub fn from_unix_millis(millis: i64) -> Self {
        Timestamp(DateTime::from_timestamp_millis(millis).expect("timestamp in range"))
    }

    pub fn unix_millis(&self) -> i64 {
        self.0.timestamp_millis()
    }

    pub fn datetime(&self) -> DateTime<Utc> {
        self.0
    }

    pub fn plus_millis(&self, millis: i64) -> Self {
        Timestamp(self.0 + Duration::milliseconds(millis))
    }

    pub fn minus_days(&self, days: i64) -> Self {
        Timestamp(self.0 - Duration::days(days))
    }
}

impl From<DateTime<Utc>> for Timestamp {
    fn from(value: DateTime<Utc>) -> Self {
        Timestamp(value)
    }
}

impl FromStr for Timestamp {
    type Err = TimestampParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if !s.ends_with('Z') || s.as_bytes().get(10) != Some(&b'T') {
            return Err(TimestampParseError(s.to_string()));
        }
        DateTime::parse_from_rfc3339(s)
            .map(|dt| Timestamp(dt.with_timezone(&Utc)))
            .map_err(|_| TimestampParseError(s.to_string()))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_rfc3339_opts(SecondsFormat::AutoSi, true))
    }
}

impl fmt::Debug for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Timestamp({self})")
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text() {
        let t: Timestamp = "2024-03-01T12:00:00Z".parse().unwrap();
        assert_eq!(t.to_string(), "2024-03-01T12:00:00Z");
        let t: Timestamp = "2024-03-01T12:00:00.250Z".parse().unwrap();
        assert_eq!(t.to_string(), "2024-03-01T12:00:00.250Z");
        assert_eq!(Timestamp::from_unix_millis(0).to_string(), "1970-01-01T00:00:00Z");
    }

    #[test]
    fn offsets_other_than_z_are_rejected() {
        assert!("2024-03-01T12:00:00+00:00".parse::<Timestamp>().is_err());
        assert!("2024-03-01 12:00:00Z".parse::<Timestamp>().is_err());
    }
}
