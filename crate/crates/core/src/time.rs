//! Virtual time. Every duration and instant in the simulator is an integer
//! number of milliseconds.

use alloc::string::{String, ToString};

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};

pub type Millis = u64;

/// Monotone virtual clock.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VirtualClock {
    now: Millis,
}

impl VirtualClock {
    pub fn starting_at(now: Millis) -> Self {
        Self { now }
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn advance(&mut self, by: Millis) -> Millis {
        self.now = self.now.saturating_add(by);
        self.now
    }

    /// Moves forward to `t`; never moves backwards.
    pub fn sleep_until(&mut self, t: Millis) -> Millis {
        self.now = self.now.max(t);
        self.now
    }
}

fn epoch() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2026, 3, 22)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid epoch")
}

/// ISO-8601 UTC timestamp, second resolution, for a virtual instant.
/// Virtual time zero maps to 2026-03-22T00:00:00Z.
pub fn iso_timestamp(ms: Millis) -> String {
    let at = epoch() + TimeDelta::milliseconds(ms.min(i64::MAX as u64) as i64);
    at.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}
