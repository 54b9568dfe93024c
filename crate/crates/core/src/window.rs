use chrono::{DateTime, Duration, DurationRound, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{MonitorError, Result};

/// Half-open UTC interval `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl TimeWindow {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self> {
        if end <= start {
            return Err(MonitorError::InvalidValue(format!("window end {end} is not after start {start}")));
        }
        Ok(Self { start, end })
    }

    /// The one-hour window containing `t`.
    pub fn hour_of(t: DateTime<Utc>) -> Self {
        let start = floor_hour(t);
        Self {
            start,
            end: start + Duration::hours(1),
        }
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t < self.end
    }

    /// Start of every hour overlapping the window.
    pub fn hours(&self) -> Vec<DateTime<Utc>> {
        let mut out = Vec::new();
        let mut h = floor_hour(self.start);
        while h < self.end {
            out.push(h);
            h += Duration::hours(1);
        }
        out
    }
}

pub fn floor_hour(t: DateTime<Utc>) -> DateTime<Utc> {
    t.duration_trunc(Duration::hours(1)).expect("hour truncation is in range")
}

/// `2020-10-29T22:00:00Z`
pub fn format_seconds(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// `2021-10-13T00:17:07.894Z`
pub fn format_millis(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Parse an RFC 3339 instant with any offset and convert it to UTC.
pub fn parse_instant(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| MonitorError::InvalidValue(format!("bad timestamp {s:?}: {e}")))
}
