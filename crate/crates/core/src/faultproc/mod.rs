//! Virtual-time process model with uncatchable kills.
//!
//! A write job is a sequence of timed steps. A kill lands at a single
//! virtual instant: the step in flight is abandoned, its put (if any) never
//! reaches the store, and no further code runs. There is no handler and no
//! cleanup path.

mod job;
mod runner;
mod timing;

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Millis;

pub use job::{Job, TimedStep, WatchdogAction, WatchdogState};
pub use runner::{run_job, JobSpec, JobSpecError};
pub use timing::{default_timing_profile, TimingProfile, DEFAULT_STARTUP_MS, LOG_FLUSH_MS};

/// Kill injection points around the commit-durability gap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// After every data file is durable, before any metadata step.
    Data,
    /// At the start of the metadata commit sequence.
    Commit,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Data => "data",
            Phase::Commit => "commit",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown kill phase {0:?}; expected \"\", \"data\" or \"commit\"")]
pub struct UnknownPhase(pub String);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum KillSchedule {
    #[default]
    None,
    AfterPhase { phase: Phase },
    /// Offset from job start.
    AtTime { t_kill: Millis },
}

impl KillSchedule {
    /// Parses the `KILL_AFTER_PHASE` convention: empty means no kill.
    pub fn from_env_value(value: &str) -> Result<Self, UnknownPhase> {
        match value.trim() {
            "" | "none" => Ok(KillSchedule::None),
            other => Phase::from_str(other).map(|phase| KillSchedule::AfterPhase { phase }),
        }
    }

    pub fn phase(&self) -> Option<Phase> {
        match self {
            KillSchedule::AfterPhase { phase } => Some(*phase),
            _ => None,
        }
    }
}

impl FromStr for Phase {
    type Err = UnknownPhase;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "data" => Ok(Phase::Data),
            "commit" => Ok(Phase::Commit),
            other => Err(UnknownPhase(other.to_string())),
        }
    }
}

/// Where a job hangs, waiting for the platform timeout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StallPoint {
    AfterData,
    CommitStart,
    AfterCommit,
}

/// Provenance of a kill. Only recorded in traces; every cause looks the same
/// from outside the process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KillCause {
    Injected,
    Timeout,
    OutOfMemory,
}

impl KillCause {
    /// Exit status as reported to the orchestrator.
    pub fn returncode(self) -> i32 {
        match self {
            KillCause::Injected | KillCause::Timeout => RC_SIGKILL,
            KillCause::OutOfMemory => RC_KILLED_137,
        }
    }
}

pub const RC_SUCCESS: i32 = 0;
pub const RC_SIGKILL: i32 = -9;
pub const RC_KILLED_137: i32 = 137;
pub const RC_EXCEPTION: i32 = 1;

/// Marker for a process that no longer exists.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Killed {
    pub at: Millis,
}

/// Why a job body stopped early.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum JobFailure {
    #[error("killed at {}", .0.at)]
    Killed(Killed),
    #[error("{0}")]
    Visible(String),
}

impl From<Killed> for JobFailure {
    fn from(k: Killed) -> Self {
        JobFailure::Killed(k)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub name: String,
    pub start: Millis,
    pub end: Millis,
    pub completed: bool,
}

impl StepRecord {
    pub fn new(name: &str, start: Millis, end: Millis, completed: bool) -> Self {
        Self {
            name: name.to_string(),
            start,
            end,
            completed,
        }
    }
}

/// Everything a job did, in virtual time.
///
/// `t_d` is the instant the last data file became durable and `t_c` the
/// instant the metadata commit took effect; the gap is `(t_d, t_c)`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobTrace {
    pub started_at: Millis,
    pub steps: Vec<StepRecord>,
    /// Watchdog timeline.
    pub background: Vec<StepRecord>,
    pub t_d: Option<Millis>,
    pub t_c: Option<Millis>,
    pub killed_at: Option<Millis>,
    pub kill_cause: Option<KillCause>,
    pub watchdog_fired_at: Option<Millis>,
    pub watchdog_finished_at: Option<Millis>,
    pub ended_at: Option<Millis>,
    pub audit: Vec<String>,
}

impl JobTrace {
    pub fn starting_at(t: Millis) -> Self {
        Self {
            started_at: t,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JobResult {
    pub returncode: i32,
    pub trace: JobTrace,
    pub duration_ms: Millis,
    pub error: Option<String>,
}

impl JobResult {
    pub fn was_killed(&self) -> bool {
        self.trace.killed_at.is_some()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GapError {
    #[error("trace has no data-durable instant")]
    MissingDataDurable,
    #[error("trace has no commit instant")]
    MissingCommit,
}

/// Width of the commit-durability gap of an uninterrupted run.
pub fn measure_gap(trace: &JobTrace) -> Result<Millis, GapError> {
    let t_d = trace.t_d.ok_or(GapError::MissingDataDurable)?;
    let t_c = trace.t_c.ok_or(GapError::MissingCommit)?;
    Ok(t_c - t_d)
}
