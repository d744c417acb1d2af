use alloc::format;
use alloc::string::ToString;

use thiserror::Error;

use super::{
    Job, JobFailure, JobResult, KillCause, KillSchedule, Phase, StallPoint, RC_EXCEPTION,
    RC_SUCCESS,
};
use crate::formats::{phase1_write_data, phase2_commit, VersionRef, WritePlan};
use crate::safewriter::{self, ConfigError, SafeWriterConfig, DEFAULT_TIMEOUT_MS};
use crate::store::ObjectStore;
use crate::time::Millis;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JobSpecError {
    #[error("invalid SafeWriter configuration: {0}")]
    SafeWriter(#[from] ConfigError),
    #[error("platform timeout must be positive")]
    ZeroTimeout,
    #[error("base version {0} does not match the table format")]
    BaseVersionFormat(VersionRef),
}

/// One write job and the faults to inject into it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JobSpec {
    pub plan: WritePlan,
    pub kill: KillSchedule,
    pub kill_cause: KillCause,
    pub safewriter: Option<SafeWriterConfig>,
    pub start_at: Millis,
    /// Unrelated work the process does before the write starts.
    pub lead_in_ms: Millis,
    /// Hang here until the platform timeout.
    pub stall: Option<StallPoint>,
    /// Version the writer believes it builds on. Defaults to the version
    /// read during startup.
    pub base_version: Option<VersionRef>,
    /// Platform timeout without SafeWriter. With SafeWriter, its watchdog
    /// configuration is authoritative.
    pub timeout_ms: Millis,
}

impl JobSpec {
    pub fn new(plan: WritePlan) -> Self {
        Self {
            plan,
            kill: KillSchedule::None,
            kill_cause: KillCause::Injected,
            safewriter: None,
            start_at: 0,
            lead_in_ms: 0,
            stall: None,
            base_version: None,
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }

    pub fn with_kill(mut self, kill: KillSchedule) -> Self {
        self.kill = kill;
        self
    }

    pub fn with_safewriter(mut self, cfg: SafeWriterConfig) -> Self {
        self.safewriter = Some(cfg);
        self
    }

    pub fn timeout(&self) -> Millis {
        self.safewriter
            .as_ref()
            .map_or(self.timeout_ms, |c| c.watchdog.timeout_ms)
    }

    pub fn validate(&self) -> Result<(), JobSpecError> {
        if let Some(cfg) = &self.safewriter {
            cfg.validate()?;
        }
        if self.timeout() == 0 {
            return Err(JobSpecError::ZeroTimeout);
        }
        if let Some(b) = self.base_version {
            if b.kind != self.plan.table.format {
                return Err(JobSpecError::BaseVersionFormat(b));
            }
        }
        Ok(())
    }
}

/// Runs one write job against `store`.
///
/// The platform timeout is always scheduled as a kill. Kills are
/// uncatchable: the body stops at the kill instant and nothing after it
/// runs, including SafeWriter's exception path. Only a watchdog that fired
/// earlier can have acted.
pub fn run_job(store: &mut ObjectStore, spec: &JobSpec) -> Result<JobResult, JobSpecError> {
    spec.validate()?;
    let start = spec.start_at;
    let mut job = Job::new(start);
    job.schedule_kill(start.saturating_add(spec.timeout()), KillCause::Timeout);
    if let KillSchedule::AtTime { t_kill } = spec.kill {
        job.schedule_kill(start.saturating_add(t_kill), spec.kill_cause);
    }

    let outcome = body(store, spec, &mut job);
    let (returncode, error) = match outcome {
        Ok(()) => {
            job.exit(store);
            (RC_SUCCESS, None)
        }
        Err(JobFailure::Killed(_)) => (job.kill_cause().returncode(), None),
        Err(JobFailure::Visible(msg)) => {
            job.exit(store);
            (RC_EXCEPTION, Some(msg))
        }
    };
    let mut trace = job.into_trace();
    if let (Some(cfg), Some(at)) = (&spec.safewriter, trace.watchdog_fired_at) {
        if cfg.audit_log {
            let done = trace
                .watchdog_finished_at
                .map_or("interrupted".to_string(), |t| format!("finished at {t}"));
            trace
                .audit
                .push(format!("watchdog fired at {at}; rollback {done}"));
        }
    }
    let ended = trace.ended_at.unwrap_or(start);
    Ok(JobResult {
        returncode,
        duration_ms: ended - start,
        trace,
        error,
    })
}

fn body(store: &mut ObjectStore, spec: &JobSpec, job: &mut Job) -> Result<(), JobFailure> {
    let plan = &spec.plan;
    let table = &plan.table;
    let timing = plan.timing;
    let start = job.now();

    if spec.lead_in_ms > 0 {
        job.step(store, "job:lead_in", spec.lead_in_ms)?;
    }
    let read = job.read(store, "phase1:startup", timing.startup_ms, |s| {
        table.read_version(s)
    })?;
    let read = read.map_err(|e| JobFailure::Visible(e.to_string()))?;
    let base = spec.base_version.unwrap_or(read);

    let sw = match &spec.safewriter {
        Some(cfg) => {
            let (doc, _v0) = safewriter::begin(store, job, cfg, &plan.run_id, table)?;
            safewriter::arm_watchdog(job, cfg, table, &doc, start);
            Some((cfg, doc))
        }
        None => None,
    };

    let result = write(store, spec, plan, base, job);
    match (result, &sw) {
        (Ok(()), Some((cfg, doc))) => {
            safewriter::finish_success(store, job, cfg, doc)?;
        }
        (Ok(()), None) => {}
        (Err(JobFailure::Visible(msg)), Some((cfg, doc))) => {
            if job.disarm_watchdog(store) != super::WatchdogState::AlreadyFired {
                safewriter::rollback(store, job, cfg, table, doc)?;
            }
            return Err(JobFailure::Visible(msg));
        }
        (Err(e), _) => return Err(e),
    }
    job.step(store, "job:shutdown", timing.shutdown_ms)?;
    Ok(())
}

fn write(
    store: &mut ObjectStore,
    spec: &JobSpec,
    plan: &WritePlan,
    base: VersionRef,
    job: &mut Job,
) -> Result<(), JobFailure> {
    let protected = spec.safewriter.is_some();
    phase1_write_data(store, plan, job)?;

    if spec.stall == Some(StallPoint::AfterData) {
        return Err(job.hang(store, "stall:after_data").into());
    }
    match spec.kill {
        KillSchedule::AfterPhase { phase: Phase::Data } => {
            job.step(store, "kill_hook:log_flush", plan.timing.log_flush_ms)?;
            if protected {
                return Err(job.hang(store, "kill_hook:hang").into());
            }
            let now = job.now();
            job.schedule_kill(now, spec.kill_cause);
            return Err(job.hang(store, "kill_hook:sigkill").into());
        }
        KillSchedule::AfterPhase {
            phase: Phase::Commit,
        } => {
            if protected {
                return Err(job.hang(store, "kill_hook:hang").into());
            }
            let first = plan
                .timing
                .commit_step_durations(plan.table.format)
                .first()
                .copied()
                .unwrap_or(0);
            let offset = if first == 0 { 0 } else { (first - 1).min(100) };
            let now = job.now();
            job.schedule_kill(now + offset, spec.kill_cause);
        }
        _ => {}
    }
    if spec.stall == Some(StallPoint::CommitStart) {
        return Err(job.hang(store, "stall:commit_start").into());
    }
    phase2_commit(store, plan, base, job)?;
    if spec.stall == Some(StallPoint::AfterCommit) {
        return Err(job.hang(store, "stall:after_commit").into());
    }
    Ok(())
}
