//! Checkpoint, watchdog and rollback around a table write.
//!
//! Before any data is written the current table version is saved to a
//! checkpoint document with status `in_progress`. A watchdog is armed to fire
//! `warn_before_ms` ahead of the platform timeout; if the write is still
//! running then, it restores the table to the saved version and marks the
//! document `rolled_back`. A clean finish cancels the watchdog and marks the
//! document `committed`.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::faultproc::{Job, JobFailure, TimedStep, WatchdogState};
use crate::formats::{Table, TableFormat, VersionRef};
use crate::store::{ObjectKey, ObjectStore};
use crate::time::{iso_timestamp, Millis};

pub const DEFAULT_TIMEOUT_MS: Millis = 900_000;
pub const DEFAULT_WARN_BEFORE_MS: Millis = 30_000;

pub const ENV_TIMEOUT: &str = "LAMBDA_TIMEOUT_MS";
pub const ENV_WARN_BEFORE: &str = "SW_WARN_BEFORE_MS";
pub const ENV_BUCKET: &str = "SW_CHECKPOINT_BUCKET";
pub const ENV_AUDIT_LOG: &str = "SW_AUDIT_LOG";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("warn_before_ms ({warn_before_ms}) must be positive and below timeout_ms ({timeout_ms})")]
    WatchdogLead { timeout_ms: Millis, warn_before_ms: Millis },
    #[error("{0} is required")]
    Missing(&'static str),
    #[error("{name}: cannot parse {value:?}")]
    Invalid { name: &'static str, value: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatchdogConfig {
    pub timeout_ms: Millis,
    pub warn_before_ms: Millis,
}

impl Default for WatchdogConfig {
    fn default() -> Self {
        Self {
            timeout_ms: DEFAULT_TIMEOUT_MS,
            warn_before_ms: DEFAULT_WARN_BEFORE_MS,
        }
    }
}

impl WatchdogConfig {
    pub fn new(timeout_ms: Millis, warn_before_ms: Millis) -> Result<Self, ConfigError> {
        let c = Self {
            timeout_ms,
            warn_before_ms,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.warn_before_ms == 0 || self.warn_before_ms >= self.timeout_ms {
            return Err(ConfigError::WatchdogLead {
                timeout_ms: self.timeout_ms,
                warn_before_ms: self.warn_before_ms,
            });
        }
        Ok(())
    }

    /// Offset from job start at which the watchdog fires.
    pub fn fire_offset(&self) -> Millis {
        self.timeout_ms - self.warn_before_ms
    }
}

/// Virtual durations of SafeWriter's own store operations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafeWriterTiming {
    pub version_read_ms: Millis,
    pub checkpoint_put_ms: Millis,
    pub restore_ms: Millis,
    pub checkpoint_update_ms: Millis,
}

impl Default for SafeWriterTiming {
    fn default() -> Self {
        Self {
            version_read_ms: 10,
            checkpoint_put_ms: 30,
            restore_ms: 150,
            checkpoint_update_ms: 30,
        }
    }
}

impl SafeWriterTiming {
    pub fn rollback_ms(&self) -> Millis {
        self.restore_ms + self.checkpoint_update_ms
    }

    /// Time added to a clean write.
    pub fn overhead_ms(&self) -> Millis {
        self.version_read_ms + self.checkpoint_put_ms + self.checkpoint_update_ms
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafeWriterConfig {
    pub checkpoint_bucket: String,
    pub watchdog: WatchdogConfig,
    pub audit_log: bool,
    pub timing: SafeWriterTiming,
}

impl SafeWriterConfig {
    pub fn new(checkpoint_bucket: impl Into<String>) -> Self {
        Self {
            checkpoint_bucket: checkpoint_bucket.into(),
            watchdog: WatchdogConfig::default(),
            audit_log: true,
            timing: SafeWriterTiming::default(),
        }
    }

    pub fn with_watchdog(mut self, watchdog: WatchdogConfig) -> Self {
        self.watchdog = watchdog;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.checkpoint_bucket.trim_matches('/').is_empty() {
            return Err(ConfigError::Missing(ENV_BUCKET));
        }
        self.watchdog.validate()
    }

    /// Reads `LAMBDA_TIMEOUT_MS`, `SW_WARN_BEFORE_MS`, `SW_CHECKPOINT_BUCKET`
    /// and `SW_AUDIT_LOG` through `lookup`. The bucket is required.
    pub fn from_env<F>(lookup: F) -> Result<Self, ConfigError>
    where
        F: Fn(&str) -> Option<String>,
    {
        let bucket = lookup(ENV_BUCKET)
            .filter(|b| !b.trim().is_empty())
            .ok_or(ConfigError::Missing(ENV_BUCKET))?;
        let millis = |name: &'static str, default: Millis| match lookup(name) {
            None => Ok(default),
            Some(v) => v.trim().parse().map_err(|_| ConfigError::Invalid { name, value: v }),
        };
        let watchdog = WatchdogConfig::new(
            millis(ENV_TIMEOUT, DEFAULT_TIMEOUT_MS)?,
            millis(ENV_WARN_BEFORE, DEFAULT_WARN_BEFORE_MS)?,
        )?;
        let audit_log = match lookup(ENV_AUDIT_LOG) {
            None => true,
            Some(v) => parse_bool(&v).ok_or(ConfigError::Invalid {
                name: ENV_AUDIT_LOG,
                value: v,
            })?,
        };
        Ok(Self {
            checkpoint_bucket: bucket,
            watchdog,
            audit_log,
            timing: SafeWriterTiming::default(),
        })
    }
}

/// Accepts `true/false`, `1/0` and `yes/no`, case-insensitively.
pub fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" | "" => Some(false),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointStatus {
    InProgress,
    Committed,
    RolledBack,
}

impl fmt::Display for CheckpointStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckpointStatus::InProgress => "in_progress",
            CheckpointStatus::Committed => "committed",
            CheckpointStatus::RolledBack => "rolled_back",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("checkpoint for {run_id} is already {status}")]
    Terminal { run_id: String, status: CheckpointStatus },
    #[error("no checkpoint document at {0}")]
    Missing(String),
    #[error("malformed checkpoint {key}: {reason}")]
    Malformed { key: String, reason: String },
    #[error("checkpoint bucket {0} is not writable")]
    Unwritable(String),
    #[error("watchdog already fired; the write was rolled back")]
    WatchdogFired,
}

/// Pre-write record of the table version.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointDoc {
    pub run_id: String,
    pub format: TableFormat,
    pub version_before: u64,
    pub status: CheckpointStatus,
    pub saved_at: String,
    pub rolled_back_at: Option<String>,
}

impl CheckpointDoc {
    pub fn in_progress(run_id: &str, v0: VersionRef, saved_at: Millis) -> Self {
        Self {
            run_id: run_id.to_string(),
            format: v0.kind,
            version_before: v0.value,
            status: CheckpointStatus::InProgress,
            saved_at: iso_timestamp(saved_at),
            rolled_back_at: None,
        }
    }

    pub fn version_before(&self) -> VersionRef {
        VersionRef {
            kind: self.format,
            value: self.version_before,
        }
    }

    fn ensure_open(&self) -> Result<(), CheckpointError> {
        match self.status {
            CheckpointStatus::InProgress => Ok(()),
            status => Err(CheckpointError::Terminal {
                run_id: self.run_id.clone(),
                status,
            }),
        }
    }

    pub fn committed(&self) -> Result<Self, CheckpointError> {
        self.ensure_open()?;
        Ok(Self {
            status: CheckpointStatus::Committed,
            ..self.clone()
        })
    }

    pub fn rolled_back(&self, at: Millis) -> Result<Self, CheckpointError> {
        self.ensure_open()?;
        Ok(Self {
            status: CheckpointStatus::RolledBack,
            rolled_back_at: Some(iso_timestamp(at)),
            ..self.clone()
        })
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("checkpoint serializes")
    }
}

pub fn checkpoint_key(bucket: &str, run_id: &str) -> ObjectKey {
    ObjectKey::new(format!("{}/{run_id}.json", bucket.trim_end_matches('/')))
        .expect("bucket and run id are non-empty")
}

pub fn read_checkpoint(
    store: &ObjectStore,
    bucket: &str,
    run_id: &str,
) -> Result<CheckpointDoc, CheckpointError> {
    let k = checkpoint_key(bucket, run_id);
    let payload = store
        .get(&k)
        .ok_or_else(|| CheckpointError::Missing(k.to_string()))?;
    serde_json::from_slice(payload.bytes()).map_err(|e| CheckpointError::Malformed {
        key: k.to_string(),
        reason: e.to_string(),
    })
}

fn failure(e: impl fmt::Display) -> JobFailure {
    JobFailure::Visible(e.to_string())
}

fn audit(job: &mut Job, cfg: &SafeWriterConfig, line: String) {
    if cfg.audit_log {
        job.trace_mut().audit.push(line);
    }
}

/// Reads `v0` and durably saves an `in_progress` checkpoint, both as timed
/// steps on `job`.
pub fn begin(
    store: &mut ObjectStore,
    job: &mut Job,
    cfg: &SafeWriterConfig,
    run_id: &str,
    table: &Table,
) -> Result<(CheckpointDoc, VersionRef), JobFailure> {
    let v0 = job
        .read(store, "sw:read_version", cfg.timing.version_read_ms, |s| {
            table.read_version(s)
        })?
        .map_err(failure)?;
    let key = checkpoint_key(&cfg.checkpoint_bucket, run_id);
    if !store.is_writable(&key) {
        return Err(failure(CheckpointError::Unwritable(
            cfg.checkpoint_bucket.clone(),
        )));
    }
    let doc = CheckpointDoc::in_progress(run_id, v0, job.now());
    job.put(
        store,
        "sw:put_checkpoint",
        key,
        doc.to_json(),
        cfg.timing.checkpoint_put_ms,
    )?;
    audit(
        job,
        cfg,
        format!("checkpoint saved run_id={run_id} version_before={}", v0.value),
    );
    Ok((doc, v0))
}

/// Restore and checkpoint update, as steps starting at `at`. The restore
/// target is computed from the store as it is at `at`; when it fails the
/// checkpoint stays `in_progress`.
pub fn rollback_steps(
    store: &ObjectStore,
    cfg: &SafeWriterConfig,
    table: &Table,
    doc: &CheckpointDoc,
    at: Millis,
) -> Vec<TimedStep> {
    let t = cfg.timing;
    let restore_done = at + t.restore_ms;
    let Ok(requests) = table.restore_requests(store, doc.version_before(), restore_done) else {
        return vec![TimedStep::delay("sw:restore_failed", t.restore_ms)];
    };
    let mut steps = Vec::with_capacity(requests.len() + 1);
    if requests.is_empty() {
        steps.push(TimedStep::delay("sw:restore_noop", t.restore_ms));
    } else {
        let n = requests.len() as Millis;
        let each = t.restore_ms / n;
        let last = t.restore_ms - each * (n - 1);
        let count = requests.len();
        for (i, r) in requests.into_iter().enumerate() {
            let d = if i + 1 == count { last } else { each };
            steps.push(TimedStep::put(
                format!("sw:restore {}", r.key.file_name()),
                d,
                r.key,
                r.payload,
            ));
        }
    }
    let done = restore_done + t.checkpoint_update_ms;
    if let Ok(updated) = doc.rolled_back(done) {
        steps.push(TimedStep::put(
            "sw:mark_rolled_back",
            t.checkpoint_update_ms,
            checkpoint_key(&cfg.checkpoint_bucket, &doc.run_id),
            updated.to_json(),
        ));
    }
    steps
}

/// Schedules the rollback at `job_start + timeout - warn_before`.
pub fn arm_watchdog(
    job: &mut Job,
    cfg: &SafeWriterConfig,
    table: &Table,
    doc: &CheckpointDoc,
    job_start: Millis,
) {
    let (cfg2, table, doc) = (cfg.clone(), table.clone(), doc.clone());
    job.arm_watchdog(
        job_start + cfg.watchdog.fire_offset(),
        Box::new(move |store, at| rollback_steps(store, &cfg2, &table, &doc, at)),
    );
    audit(
        job,
        cfg,
        format!(
            "watchdog armed fire_at={}",
            job_start + cfg.watchdog.fire_offset()
        ),
    );
}

/// Main-thread rollback after a visible failure.
pub fn rollback(
    store: &mut ObjectStore,
    job: &mut Job,
    cfg: &SafeWriterConfig,
    table: &Table,
    doc: &CheckpointDoc,
) -> Result<CheckpointDoc, JobFailure> {
    doc.ensure_open().map_err(failure)?;
    let at = job.now();
    let steps = rollback_steps(store, cfg, table, doc, at);
    job.run_steps(store, steps)?;
    let after = read_checkpoint(store, &cfg.checkpoint_bucket, &doc.run_id).map_err(failure)?;
    audit(
        job,
        cfg,
        format!(
            "rollback run_id={} to version {} status={}",
            doc.run_id, doc.version_before, after.status
        ),
    );
    Ok(after)
}

/// Cancels the watchdog and marks the checkpoint `committed`. Fails if the
/// watchdog already fired or the stored document is not `in_progress`.
pub fn finish_success(
    store: &mut ObjectStore,
    job: &mut Job,
    cfg: &SafeWriterConfig,
    doc: &CheckpointDoc,
) -> Result<CheckpointDoc, JobFailure> {
    if job.disarm_watchdog(store) == WatchdogState::AlreadyFired {
        return Err(failure(CheckpointError::WatchdogFired));
    }
    let stored = read_checkpoint(store, &cfg.checkpoint_bucket, &doc.run_id).map_err(failure)?;
    let updated = stored.committed().map_err(failure)?;
    job.put(
        store,
        "sw:mark_committed",
        checkpoint_key(&cfg.checkpoint_bucket, &doc.run_id),
        updated.to_json(),
        cfg.timing.checkpoint_update_ms,
    )?;
    audit(job, cfg, format!("committed run_id={}", doc.run_id));
    Ok(updated)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryKind {
    /// The table had moved; it was restored, then the checkpoint closed.
    CompletedRollback,
    /// Nothing had been committed; only the checkpoint was closed.
    MarkedRolledBack,
    /// Checkpoint belongs to a different table format.
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryAction {
    pub run_id: String,
    pub version_before: u64,
    pub version_found: Option<u64>,
    pub action: RecoveryKind,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub actions: Vec<RecoveryAction>,
    pub malformed: Vec<MalformedCheckpoint>,
}

impl RecoveryReport {
    pub fn is_empty(&self) -> bool {
        self.actions.is_empty() && self.malformed.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedCheckpoint {
    pub key: String,
    pub reason: String,
}

/// Every checkpoint in `bucket`, in key order. Unparseable objects are
/// returned separately.
pub fn list_checkpoints(
    store: &ObjectStore,
    bucket: &str,
) -> (Vec<CheckpointDoc>, Vec<MalformedCheckpoint>) {
    let prefix = format!("{}/", bucket.trim_end_matches('/'));
    let mut docs = Vec::new();
    let mut bad = Vec::new();
    for k in store.list_prefix(&prefix) {
        if !k.as_str().ends_with(".json") {
            continue;
        }
        let payload = store.get(&k).expect("listed keys exist");
        match serde_json::from_slice::<CheckpointDoc>(payload.bytes()) {
            Ok(d) => docs.push(d),
            Err(e) => bad.push(MalformedCheckpoint {
                key: k.to_string(),
                reason: e.to_string(),
            }),
        }
    }
    (docs, bad)
}

/// Closes every stale `in_progress` checkpoint in `bucket` against `table`,
/// instantly at `at`.
pub fn recover(
    store: &mut ObjectStore,
    bucket: &str,
    table: &Table,
    at: Millis,
) -> RecoveryReport {
    let (docs, malformed) = list_checkpoints(store, bucket);
    let mut actions = Vec::new();
    for doc in docs
        .into_iter()
        .filter(|d| d.status == CheckpointStatus::InProgress)
    {
        let found = table.read_version(store).ok().map(|v| v.value);
        if doc.format != table.format {
            actions.push(RecoveryAction {
                run_id: doc.run_id.clone(),
                version_before: doc.version_before,
                version_found: found,
                action: RecoveryKind::Skipped,
            });
            continue;
        }
        let v0 = doc.version_before();
        let action = match table.is_equivalent_to(store, v0) {
            Ok(true) => RecoveryKind::MarkedRolledBack,
            Ok(false) => match table.restore(store, v0, at) {
                Ok(_) => RecoveryKind::CompletedRollback,
                Err(_) => RecoveryKind::Skipped,
            },
            Err(_) => RecoveryKind::Skipped,
        };
        if action != RecoveryKind::Skipped {
            let closed = doc.rolled_back(at).expect("filtered to in_progress");
            store.put(checkpoint_key(bucket, &doc.run_id), closed.to_json(), at, 0);
        }
        actions.push(RecoveryAction {
            run_id: doc.run_id,
            version_before: doc.version_before,
            version_found: found,
            action,
        });
    }
    RecoveryReport { actions, malformed }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolledBackEntry {
    pub run_id: String,
    pub rolled_back_at: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanResult {
    pub rolled_back: Vec<RolledBackEntry>,
    pub malformed: Vec<MalformedCheckpoint>,
}

/// Rolled-back runs in `bucket`, ordered by rollback time then run id.
pub fn scan_rolled_back(store: &ObjectStore, bucket: &str) -> ScanResult {
    let (docs, malformed) = list_checkpoints(store, bucket);
    let mut rolled_back: Vec<RolledBackEntry> = docs
        .into_iter()
        .filter(|d| d.status == CheckpointStatus::RolledBack)
        .map(|d| RolledBackEntry {
            run_id: d.run_id,
            rolled_back_at: d.rolled_back_at.unwrap_or_default(),
        })
        .collect();
    rolled_back.sort_by(|a, b| {
        (a.rolled_back_at.as_str(), a.run_id.as_str())
            .cmp(&(b.rolled_back_at.as_str(), b.run_id.as_str()))
    });
    ScanResult {
        rolled_back,
        malformed,
    }
}

/// Chance that a kill drawn uniformly over the timeout budget lands inside
/// the rollback window.
pub fn rollback_window_probability(rollback_ms: Millis, timeout_ms: Millis) -> f64 {
    if timeout_ms == 0 {
        return 0.0;
    }
    rollback_ms as f64 / timeout_ms as f64
}
