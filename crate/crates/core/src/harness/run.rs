use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    classify, monitor_view, ExperimentDesign, ExperimentSpec, KillPhase, MonitorView, RunRecord,
};
use crate::faultproc::{
    default_timing_profile, run_job, JobResult, JobSpec, JobTrace, KillSchedule, TimingProfile,
    RC_EXCEPTION,
};
use crate::formats::{Table, VersionRef, WritePlan};
use crate::safewriter::{read_checkpoint, CheckpointStatus, SafeWriterConfig, DEFAULT_TIMEOUT_MS};
use crate::stats::{summarize, Summary};
use crate::store::{ObjectKey, ObjectStore};
use crate::time::{iso_timestamp, Millis};

/// Virtual instant at which every measured job starts. The table is created
/// and seeded before it.
pub const JOB_START_MS: Millis = 1_000;

pub const DEFAULT_NOISE_CV: f64 = 0.054;
pub const DEFAULT_CHECKPOINT_BUCKET: &str = "checkpoints";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixOptions {
    /// Coefficient of variation of per-run timing noise; 0 disables it.
    pub noise_cv: f64,
    pub safewriter: SafeWriterConfig,
    /// Platform timeout for runs without SafeWriter.
    pub timeout_ms: Millis,
}

impl Default for MatrixOptions {
    fn default() -> Self {
        Self {
            noise_cv: DEFAULT_NOISE_CV,
            safewriter: SafeWriterConfig::new(DEFAULT_CHECKPOINT_BUCKET),
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }
}

impl MatrixOptions {
    pub fn noiseless() -> Self {
        Self {
            noise_cv: 0.0,
            ..Self::default()
        }
    }
}

/// One scheduled run. `sequence` is the position in the whole matrix and
/// selects the run's random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunInput {
    pub spec: ExperimentSpec,
    pub index: u32,
    pub sequence: u64,
    pub seed: u64,
}

pub fn plan_runs(design: &ExperimentDesign, seed: u64) -> Vec<RunInput> {
    let mut out = Vec::with_capacity(design.total_runs() as usize);
    let mut sequence = 0;
    for spec in &design.specs {
        for index in 0..spec.runs {
            out.push(RunInput {
                spec: *spec,
                index,
                sequence,
                seed,
            });
            sequence += 1;
        }
    }
    out
}

/// Store-derived view of how a run ended, independent of its exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum OracleOutcome {
    /// Every planned file is visible and the version moved.
    Committed,
    /// Table back at its pre-write state and the checkpoint says so.
    RolledBack,
    /// Table unchanged; `durable` of `planned` files sit unreferenced.
    Orphaned { durable: usize, planned: usize },
    /// Table unchanged and nothing of the write reached the store.
    Untouched,
    /// The job raised an error to its caller.
    Raised,
    /// Neither the old nor the new state.
    Inconsistent,
}

impl OracleOutcome {
    pub fn agrees_with(self, outcome: super::Outcome) -> bool {
        use super::Outcome::*;
        matches!(
            (self, outcome),
            (OracleOutcome::Committed, Success)
                | (OracleOutcome::RolledBack, RollbackSuccess)
                | (OracleOutcome::Orphaned { .. }, SilentDataLoss)
                | (OracleOutcome::Raised, VisibleError)
        )
    }

    /// All data durable, commit absent: the write landed in the gap.
    pub fn is_gap_loss(self) -> bool {
        matches!(self, OracleOutcome::Orphaned { durable, planned } if durable == planned && planned > 0)
    }
}

/// Rebuilds a run's outcome from the final store contents.
pub fn reconstruct(
    store: &ObjectStore,
    table: &Table,
    plan: &WritePlan,
    before: VersionRef,
    raised: bool,
    checkpoint_bucket: Option<&str>,
) -> OracleOutcome {
    if raised {
        return OracleOutcome::Raised;
    }
    let Ok(live) = table.live_files(store) else {
        return OracleOutcome::Inconsistent;
    };
    let moved = table.read_version(store).map(|v| v != before).unwrap_or(true);
    if moved && plan.keys().all(|k| live.contains(k)) && !table.is_equivalent_to(store, before).unwrap_or(false) {
        return OracleOutcome::Committed;
    }
    if !table.is_equivalent_to(store, before).unwrap_or(false) {
        return OracleOutcome::Inconsistent;
    }
    if let Some(bucket) = checkpoint_bucket {
        if read_checkpoint(store, bucket, &plan.run_id)
            .is_ok_and(|d| d.status == CheckpointStatus::RolledBack)
        {
            return OracleOutcome::RolledBack;
        }
    }
    let durable = plan
        .keys()
        .filter(|k| store.contains(k) && !live.contains(*k))
        .count();
    if durable > 0 {
        OracleOutcome::Orphaned {
            durable,
            planned: plan.files.len(),
        }
    } else {
        OracleOutcome::Untouched
    }
}

/// Everything one run produced.
#[derive(Clone, Debug)]
pub struct RunExecution {
    pub input: RunInput,
    pub record: RunRecord,
    pub result: JobResult,
    pub oracle: OracleOutcome,
    pub table: Table,
    pub plan: WritePlan,
    pub version_before: VersionRef,
    pub monitor_before: MonitorView,
    pub monitor_after: MonitorView,
    pub orphans: Vec<ObjectKey>,
    pub orphan_bytes: u64,
    pub store: ObjectStore,
}

impl RunExecution {
    pub fn oracle_agrees(&self) -> bool {
        self.oracle.agrees_with(self.record.outcome)
    }
}

fn table_path(spec: &ExperimentSpec) -> String {
    format!("warehouse/{}/listings_{}", spec.format.tag(), spec.scale.label())
}

/// Creates the table and commits one earlier write so it is not empty.
pub(crate) fn seed_table(store: &mut ObjectStore, table: &Table, spec: &ExperimentSpec) {
    table.create(store, 0).expect("fresh store has no table");
    let zero = TimingProfile {
        startup_ms: 0,
        data_write_ms: 0,
        commit_ms: 0,
        log_flush_ms: 0,
        shutdown_ms: 0,
    };
    let plan = WritePlan::new(
        table,
        "seed",
        spec.scale.rows(),
        spec.scale.csv_bytes(),
        spec.scale.file_count(),
        zero,
    );
    let seeded = run_job(store, &JobSpec::new(plan)).expect("seed job is valid");
    debug_assert_eq!(seeded.returncode, 0);
}

fn spec_error(start: Millis, msg: String) -> JobResult {
    let mut trace = JobTrace::starting_at(start);
    trace.ended_at = Some(start);
    JobResult {
        returncode: RC_EXCEPTION,
        trace,
        duration_ms: 0,
        error: Some(msg),
    }
}

/// Runs one experiment in its own store. The record's timestamp is left
/// empty; see [`assign_timestamps`].
pub fn execute_run(input: &RunInput, options: &MatrixOptions) -> RunExecution {
    let spec = input.spec;
    let mut rng = ChaCha8Rng::seed_from_u64(input.seed);
    rng.set_stream(input.sequence);
    let suffix: u32 = rng.random();
    let run_id = format!(
        "{}-{}-{:04}-{suffix:08x}",
        spec.part.prefix(),
        spec.scenario,
        input.index
    );
    let timing = default_timing_profile(spec.format, spec.scale).jittered(&mut rng, options.noise_cv);

    let table = Table::new(table_path(&spec), spec.format);
    let mut store = ObjectStore::new();
    seed_table(&mut store, &table, &spec);
    let version_before = table.read_version(&store).expect("seeded table");

    let plan = WritePlan::new(
        &table,
        run_id.clone(),
        spec.scale.rows(),
        spec.scale.csv_bytes(),
        spec.scale.file_count(),
        timing,
    );
    let mut job = JobSpec::new(plan.clone());
    job.start_at = JOB_START_MS;
    job.timeout_ms = options.timeout_ms;
    if let Some(phase) = spec.scenario.kill_phase() {
        job.kill = KillSchedule::AfterPhase { phase };
    }
    let sw = spec.scenario.safewriter();
    if sw {
        job.safewriter = Some(options.safewriter.clone());
    }
    let monitor_before = monitor_view(&store, &table, 0);
    let result = run_job(&mut store, &job)
        .unwrap_or_else(|e| spec_error(JOB_START_MS, format!("{e}")));

    let bucket = sw.then_some(options.safewriter.checkpoint_bucket.as_str());
    let oracle = reconstruct(
        &store,
        &table,
        &plan,
        version_before,
        result.error.is_some(),
        bucket,
    );
    let orphans = table.find_orphans(&store).unwrap_or_default();
    let orphan_bytes = orphans
        .iter()
        .filter_map(|k| store.get(k))
        .map(|p| p.len())
        .sum();
    let record = RunRecord {
        run_id,
        table_format: spec.format,
        dataset: spec.scale,
        kill_phase: KillPhase::from(spec.scenario.kill_phase()),
        use_safe_writer: sw,
        outcome: classify(result.returncode, sw),
        duration_ms: result.duration_ms,
        returncode: result.returncode,
        timestamp: String::new(),
    };
    RunExecution {
        input: *input,
        monitor_after: monitor_view(&store, &table, result.returncode),
        record,
        result,
        oracle,
        table,
        plan,
        version_before,
        monitor_before,
        orphans,
        orphan_bytes,
        store,
    }
}

/// Lays the runs out back to back from the virtual epoch; each record gets
/// the instant its run finished.
pub fn assign_timestamps(records: &mut [RunRecord]) {
    let mut t: Millis = 0;
    for r in records {
        t += r.duration_ms;
        r.timestamp = iso_timestamp(t);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixOutput {
    pub records: Vec<RunRecord>,
    pub summary: Summary,
    /// Runs whose exit-status outcome disagrees with the store.
    pub oracle_mismatches: Vec<String>,
    pub orphan_files: u64,
    pub orphan_bytes: u64,
}

impl MatrixOutput {
    pub fn from_executions<I: IntoIterator<Item = RunExecution>>(runs: I) -> Self {
        let mut records = Vec::new();
        let mut oracle_mismatches = Vec::new();
        let (mut orphan_files, mut orphan_bytes) = (0, 0);
        for run in runs {
            if !run.oracle_agrees() {
                oracle_mismatches.push(run.record.run_id.clone());
            }
            orphan_files += run.orphans.len() as u64;
            orphan_bytes += run.orphan_bytes;
            records.push(run.record);
        }
        assign_timestamps(&mut records);
        let summary = summarize(&records);
        Self {
            records,
            summary,
            oracle_mismatches,
            orphan_files,
            orphan_bytes,
        }
    }
}

/// Runs the design sequentially.
pub fn run_matrix(design: &ExperimentDesign, seed: u64, options: &MatrixOptions) -> MatrixOutput {
    MatrixOutput::from_executions(
        plan_runs(design, seed)
            .iter()
            .map(|input| execute_run(input, options)),
    )
}
