//! Experiment matrix: design, per-run execution, outcome classification and
//! run records.

mod dataset;
mod monitor;
mod run;

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::faultproc::{Phase, RC_KILLED_137, RC_SIGKILL, RC_SUCCESS};
use crate::formats::TableFormat;

pub use dataset::{DatasetSpec, Listing, Rows, COLUMNS};
pub use monitor::{monitor_view, ExitClass, MonitorView};
pub use run::{
    assign_timestamps, execute_run, plan_runs, reconstruct, run_matrix, MatrixOptions,
    MatrixOutput, OracleOutcome, RunExecution, RunInput, DEFAULT_CHECKPOINT_BUCKET,
    DEFAULT_NOISE_CV, JOB_START_MS,
};
pub(crate) use run::seed_table;

const MIB: f64 = 1_048_576.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scale {
    #[serde(rename = "22k")]
    Small,
    #[serde(rename = "100k")]
    Medium,
    #[serde(rename = "500k")]
    Large,
}

impl Scale {
    pub const ALL: [Scale; 3] = [Scale::Small, Scale::Medium, Scale::Large];

    pub fn label(self) -> &'static str {
        match self {
            Scale::Small => "22k",
            Scale::Medium => "100k",
            Scale::Large => "500k",
        }
    }

    pub fn rows(self) -> u64 {
        match self {
            Scale::Small => 22_248,
            Scale::Medium => 100_000,
            Scale::Large => 500_000,
        }
    }

    /// Source CSV size in MiB.
    pub fn csv_mib(self) -> f64 {
        match self {
            Scale::Small => 3.8,
            Scale::Medium => 9.4,
            Scale::Large => 47.9,
        }
    }

    pub fn csv_bytes(self) -> u64 {
        libm::round(self.csv_mib() * MIB) as u64
    }

    /// Part files per write: one per started 2 MiB of input.
    pub fn file_count(self) -> usize {
        self.csv_bytes().div_ceil(2 * 1_048_576) as usize
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown scale {0:?}; expected 22k, 100k or 500k")]
pub struct UnknownScale(pub String);

impl FromStr for Scale {
    type Err = UnknownScale;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "22k" | "small" => Ok(Scale::Small),
            "100k" | "medium" => Ok(Scale::Medium),
            "500k" | "large" => Ok(Scale::Large),
            _ => Err(UnknownScale(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Part {
    A,
    B,
}

impl Part {
    pub fn prefix(self) -> &'static str {
        match self {
            Part::A => "a",
            Part::B => "b",
        }
    }

    /// Recovers the part from a run id prefix.
    pub fn of_run_id(run_id: &str) -> Option<Part> {
        match run_id.split('-').next() {
            Some("a") => Some(Part::A),
            Some("b") => Some(Part::B),
            _ => None,
        }
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Part::A => "A",
            Part::B => "B",
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown part {0:?}; expected A or B")]
pub struct UnknownPart(pub String);

impl FromStr for Part {
    type Err = UnknownPart;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(Part::A),
            "B" | "b" => Ok(Part::B),
            _ => Err(UnknownPart(s.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Baseline,
    KillData,
    KillCommit,
    SwKillData,
    SwKillCommit,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Baseline,
        Scenario::KillData,
        Scenario::KillCommit,
        Scenario::SwKillData,
        Scenario::SwKillCommit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Baseline => "baseline",
            Scenario::KillData => "kill_data",
            Scenario::KillCommit => "kill_commit",
            Scenario::SwKillData => "sw_kill_data",
            Scenario::SwKillCommit => "sw_kill_commit",
        }
    }

    pub fn kill_phase(self) -> Option<Phase> {
        match self {
            Scenario::Baseline => None,
            Scenario::KillData | Scenario::SwKillData => Some(Phase::Data),
            Scenario::KillCommit | Scenario::SwKillCommit => Some(Phase::Commit),
        }
    }

    pub fn safewriter(self) -> bool {
        matches!(self, Scenario::SwKillData | Scenario::SwKillCommit)
    }

    pub fn from_parts(kill: KillPhase, safewriter: bool) -> Scenario {
        match (kill, safewriter) {
            (KillPhase::None, _) => Scenario::Baseline,
            (KillPhase::Data, false) => Scenario::KillData,
            (KillPhase::Commit, false) => Scenario::KillCommit,
            (KillPhase::Data, true) => Scenario::SwKillData,
            (KillPhase::Commit, true) => Scenario::SwKillCommit,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown scenario {0:?}")]
pub struct UnknownScenario(pub String);

impl FromStr for Scenario {
    type Err = UnknownScenario;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| UnknownScenario(s.to_string()))
    }
}

/// Kill phase as recorded in a run record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KillPhase {
    None,
    Data,
    Commit,
}

impl From<Option<Phase>> for KillPhase {
    fn from(p: Option<Phase>) -> Self {
        match p {
            None => KillPhase::None,
            Some(Phase::Data) => KillPhase::Data,
            Some(Phase::Commit) => KillPhase::Commit,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    RollbackSuccess,
    SilentDataLoss,
    VisibleError,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [
        Outcome::Success,
        Outcome::RollbackSuccess,
        Outcome::SilentDataLoss,
        Outcome::VisibleError,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::RollbackSuccess => "rollback_success",
            Outcome::SilentDataLoss => "silent_data_loss",
            Outcome::VisibleError => "visible_error",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome from the exit status alone. Any kill without SafeWriter counts
/// as silent loss; kills are only injected inside the gap.
pub fn classify(returncode: i32, safewriter: bool) -> Outcome {
    match returncode {
        RC_SUCCESS => Outcome::Success,
        RC_SIGKILL | RC_KILLED_137 if safewriter => Outcome::RollbackSuccess,
        RC_SIGKILL | RC_KILLED_137 => Outcome::SilentDataLoss,
        _ => Outcome::VisibleError,
    }
}

/// One line of the results file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub run_id: String,
    pub table_format: TableFormat,
    pub dataset: Scale,
    pub kill_phase: KillPhase,
    pub use_safe_writer: bool,
    pub outcome: Outcome,
    pub duration_ms: u64,
    pub returncode: i32,
    pub timestamp: String,
}

impl RunRecord {
    pub fn scenario(&self) -> Scenario {
        Scenario::from_parts(self.kill_phase, self.use_safe_writer)
    }

    pub fn part(&self) -> Option<Part> {
        Part::of_run_id(&self.run_id)
    }
}

/// One row of the experiment design.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub part: Part,
    pub format: TableFormat,
    pub scale: Scale,
    pub scenario: Scenario,
    pub runs: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentDesign {
    pub specs: Vec<ExperimentSpec>,
}

/// Selection over a design. `None` matches everything.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DesignFilter {
    pub part: Option<Part>,
    pub format: Option<TableFormat>,
    pub scenario: Option<Scenario>,
    pub scale: Option<Scale>,
}

impl DesignFilter {
    pub fn matches(&self, s: &ExperimentSpec) -> bool {
        self.part.is_none_or(|p| p == s.part)
            && self.format.is_none_or(|f| f == s.format)
            && self.scenario.is_none_or(|x| x == s.scenario)
            && self.scale.is_none_or(|x| x == s.scale)
    }
}

pub const PART_A_RUNS: [(Scenario, u32); 5] = [
    (Scenario::Baseline, 50),
    (Scenario::KillData, 75),
    (Scenario::KillCommit, 75),
    (Scenario::SwKillData, 25),
    (Scenario::SwKillCommit, 25),
];

pub const PART_B_RUNS: [(Scenario, u32); 2] = [(Scenario::Baseline, 30), (Scenario::KillData, 30)];

impl ExperimentDesign {
    /// The full design: 500 Part A runs at 22k and 360 Part B runs across
    /// scales.
    pub fn default_table() -> Self {
        let mut specs = Vec::new();
        for (scenario, runs) in PART_A_RUNS {
            for format in TableFormat::ALL {
                specs.push(ExperimentSpec {
                    part: Part::A,
                    format,
                    scale: Scale::Small,
                    scenario,
                    runs,
                });
            }
        }
        for (scenario, runs) in PART_B_RUNS {
            for format in TableFormat::ALL {
                for scale in Scale::ALL {
                    specs.push(ExperimentSpec {
                        part: Part::B,
                        format,
                        scale,
                        scenario,
                        runs,
                    });
                }
            }
        }
        Self { specs }
    }

    pub fn total_runs(&self) -> u64 {
        self.specs.iter().map(|s| u64::from(s.runs)).sum()
    }

    pub fn filtered(&self, f: &DesignFilter) -> Self {
        Self {
            specs: self.specs.iter().copied().filter(|s| f.matches(s)).collect(),
        }
    }

    /// Overrides the run count of every row.
    pub fn with_runs(mut self, runs: u32) -> Self {
        for s in &mut self.specs {
            s.runs = runs;
        }
        self
    }
}

#[cfg(test)]
mod tests;
