//! Table-format commit protocols over the object store.
//!
//! Both formats write data files first and make them visible with a later
//! metadata step. [`TableFormat::LogAppend`] appends a numbered JSON entry to
//! `<table>/_delta_log/`. [`TableFormat::SnapshotPointer`] writes a manifest,
//! a manifest list and a metadata document, then swaps
//! `<table>/metadata/version-hint.text` to the new metadata.

mod log_append;
mod snapshot_pointer;

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::faultproc::{Job, JobFailure, Killed, TimingProfile};
use crate::store::{ObjectKey, ObjectStore, Payload};
use crate::time::Millis;

pub use log_append::CommitEntry;
pub use snapshot_pointer::{ManifestFile, ManifestList, SnapshotSummary, TableMetadata};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TableFormat {
    #[serde(rename = "delta")]
    LogAppend,
    #[serde(rename = "iceberg")]
    SnapshotPointer,
}

impl TableFormat {
    pub const ALL: [TableFormat; 2] = [TableFormat::LogAppend, TableFormat::SnapshotPointer];

    /// Short tag used in checkpoint documents and run records.
    pub fn tag(self) -> &'static str {
        match self {
            TableFormat::LogAppend => "delta",
            TableFormat::SnapshotPointer => "iceberg",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            TableFormat::LogAppend => "Delta Lake",
            TableFormat::SnapshotPointer => "Apache Iceberg",
        }
    }

    /// Version of an empty, freshly created table.
    pub fn initial_version(self) -> u64 {
        match self {
            TableFormat::LogAppend => 0,
            TableFormat::SnapshotPointer => 1,
        }
    }
}

impl fmt::Display for TableFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown table format {0:?}")]
pub struct UnknownFormat(pub String);

impl FromStr for TableFormat {
    type Err = UnknownFormat;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "delta" | "log_append" | "log-append" => Ok(TableFormat::LogAppend),
            "iceberg" | "snapshot_pointer" | "snapshot-pointer" => Ok(TableFormat::SnapshotPointer),
            other => Err(UnknownFormat(other.to_string())),
        }
    }
}

/// Committed table version: a log version for log-append tables, a snapshot
/// id for snapshot-pointer tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VersionRef {
    pub kind: TableFormat,
    pub value: u64,
}

impl fmt::Display for VersionRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TableFormat::LogAppend => write!(f, "version {}", self.value),
            TableFormat::SnapshotPointer => write!(f, "snapshot {}", self.value),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("a table already exists at {0}")]
    TableExists(String),
    #[error("no table at {0}")]
    TableNotFound(String),
    #[error("{table} has no committed {version}")]
    UnknownVersion { table: String, version: VersionRef },
    #[error("corrupt object {key}: {reason}")]
    Corrupt { key: String, reason: String },
    #[error("concurrent modification of {table}: expected {expected}, found {found}")]
    Conflict {
        table: String,
        expected: VersionRef,
        found: VersionRef,
    },
    #[error("version {0} belongs to a different table format")]
    WrongFormat(VersionRef),
}

pub(crate) fn corrupt(key: &ObjectKey, reason: impl fmt::Display) -> FormatError {
    FormatError::Corrupt {
        key: key.to_string(),
        reason: reason.to_string(),
    }
}

pub(crate) fn key(path: String) -> ObjectKey {
    ObjectKey::new(path).expect("table paths are non-empty")
}

/// Data file as written by phase one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFile {
    pub key: ObjectKey,
    pub row_count: u64,
    pub byte_size: u64,
}

/// Leading bytes of a data file object. The rest of the object is filler.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFileHeader {
    pub run_id: String,
    pub index: u32,
    pub rows: u64,
    pub bytes: u64,
}

impl DataFileHeader {
    pub fn payload(&self) -> Payload {
        let mut header = serde_json::to_vec(self).expect("header serializes");
        header.push(b'\n');
        Payload::sparse(header, self.bytes)
    }

    pub fn parse(key: &ObjectKey, payload: &Payload) -> Result<Self, FormatError> {
        let bytes = payload.bytes();
        let line = bytes.split(|b| *b == b'\n').next().unwrap_or(bytes);
        serde_json::from_slice(line).map_err(|e| corrupt(key, e))
    }
}

/// Deterministic part-file UUID for `(run_id, index)`.
pub fn part_uuid(run_id: &str, index: u32) -> Uuid {
    Uuid::new_v5(&Uuid::NAMESPACE_OID, format!("{run_id}/{index}").as_bytes())
}

pub(crate) fn artifact_uuid(run_id: &str, what: &str) -> Uuid {
    Uuid::new_v5(&Uuid::NAMESPACE_OID, format!("{run_id}#{what}").as_bytes())
}

/// `part-<5-digit index>-<uuid>.snappy.parquet`
pub fn part_file_name(run_id: &str, index: u32) -> String {
    format!("part-{index:05}-{}.snappy.parquet", part_uuid(run_id, index))
}

pub(crate) fn is_part_file(name: &str) -> bool {
    name.starts_with("part-") && name.ends_with(".parquet")
}

/// A single object write produced by a metadata operation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PutRequest {
    pub key: ObjectKey,
    pub payload: Payload,
}

/// Handle on one table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub path: String,
    pub format: TableFormat,
    /// Reject a commit when the table moved since the write read it.
    /// On by default for log-append; snapshot-pointer defaults to
    /// last-pointer-swap-wins.
    pub conflict_check: bool,
}

impl Table {
    pub fn new(path: impl Into<String>, format: TableFormat) -> Self {
        let path = path.into().trim_end_matches('/').to_string();
        Self {
            path,
            format,
            conflict_check: format == TableFormat::LogAppend,
        }
    }

    pub fn with_conflict_check(mut self, on: bool) -> Self {
        self.conflict_check = on;
        self
    }

    pub fn version(&self, value: u64) -> VersionRef {
        VersionRef {
            kind: self.format,
            value,
        }
    }

    fn check_kind(&self, v: VersionRef) -> Result<(), FormatError> {
        if v.kind == self.format {
            Ok(())
        } else {
            Err(FormatError::WrongFormat(v))
        }
    }

    /// Prefix under which this format puts data files.
    pub fn data_prefix(&self) -> String {
        match self.format {
            TableFormat::LogAppend => format!("{}/", self.path),
            TableFormat::SnapshotPointer => format!("{}/data/", self.path),
        }
    }

    pub fn data_file_key(&self, run_id: &str, index: u32) -> ObjectKey {
        key(format!("{}{}", self.data_prefix(), part_file_name(run_id, index)))
    }

    pub fn exists(&self, store: &ObjectStore) -> bool {
        match self.format {
            TableFormat::LogAppend => log_append::exists(store, self),
            TableFormat::SnapshotPointer => snapshot_pointer::exists(store, self),
        }
    }

    /// Creates an empty table: log version 0 or snapshot 1.
    pub fn create(&self, store: &mut ObjectStore, at: Millis) -> Result<VersionRef, FormatError> {
        if self.exists(store) {
            return Err(FormatError::TableExists(self.path.clone()));
        }
        let puts = match self.format {
            TableFormat::LogAppend => log_append::create_requests(self, at),
            TableFormat::SnapshotPointer => snapshot_pointer::create_requests(self, at),
        };
        for p in puts {
            store.put(p.key, p.payload, at, 0);
        }
        Ok(self.version(self.format.initial_version()))
    }

    /// Latest committed version. In-flight writes are never reflected.
    pub fn read_version(&self, store: &ObjectStore) -> Result<VersionRef, FormatError> {
        let value = match self.format {
            TableFormat::LogAppend => log_append::latest_version(store, self)?,
            TableFormat::SnapshotPointer => snapshot_pointer::current_snapshot(store, self)?,
        };
        Ok(self.version(value))
    }

    /// Every committed version, oldest first.
    pub fn versions(&self, store: &ObjectStore) -> Result<Vec<VersionRef>, FormatError> {
        let values = match self.format {
            TableFormat::LogAppend => log_append::versions(store, self)?,
            TableFormat::SnapshotPointer => snapshot_pointer::snapshot_ids(store, self)?,
        };
        Ok(values.into_iter().map(|v| self.version(v)).collect())
    }

    /// Data files readers see at version `v`.
    pub fn files_at(
        &self,
        store: &ObjectStore,
        v: VersionRef,
    ) -> Result<BTreeSet<ObjectKey>, FormatError> {
        self.check_kind(v)?;
        match self.format {
            TableFormat::LogAppend => log_append::files_at(store, self, v),
            TableFormat::SnapshotPointer => snapshot_pointer::files_at(store, self, v),
        }
    }

    /// Data files readers see now.
    pub fn live_files(&self, store: &ObjectStore) -> Result<BTreeSet<ObjectKey>, FormatError> {
        let v = self.read_version(store)?;
        self.files_at(store, v)
    }

    /// Union of data files referenced by any committed version.
    pub fn referenced_files(&self, store: &ObjectStore) -> Result<BTreeSet<ObjectKey>, FormatError> {
        match self.format {
            TableFormat::LogAppend => log_append::referenced_files(store, self),
            TableFormat::SnapshotPointer => snapshot_pointer::referenced_files(store, self),
        }
    }

    pub fn row_count_at(&self, store: &ObjectStore, v: VersionRef) -> Result<u64, FormatError> {
        let files = self.files_at(store, v)?;
        sum_rows(store, &files)
    }

    /// Sum of row counts over files of the current committed version.
    pub fn visible_row_count(&self, store: &ObjectStore) -> Result<u64, FormatError> {
        let files = self.live_files(store)?;
        sum_rows(store, &files)
    }

    /// Whether readers currently see exactly what they saw at `v`.
    pub fn is_equivalent_to(&self, store: &ObjectStore, v: VersionRef) -> Result<bool, FormatError> {
        self.check_kind(v)?;
        match self.format {
            TableFormat::LogAppend => Ok(self.live_files(store)? == self.files_at(store, v)?),
            TableFormat::SnapshotPointer => Ok(self.read_version(store)? == v),
        }
    }

    /// Metadata writes that make `v0` current again; empty when readers
    /// already see `v0`. Data files are never touched.
    pub fn restore_requests(
        &self,
        store: &ObjectStore,
        v0: VersionRef,
        committed_at: Millis,
    ) -> Result<Vec<PutRequest>, FormatError> {
        self.check_kind(v0)?;
        if !self.versions(store)?.contains(&v0) {
            return Err(FormatError::UnknownVersion {
                table: self.path.clone(),
                version: v0,
            });
        }
        if self.is_equivalent_to(store, v0)? {
            return Ok(Vec::new());
        }
        match self.format {
            TableFormat::LogAppend => log_append::restore_requests(store, self, v0, committed_at),
            TableFormat::SnapshotPointer => {
                snapshot_pointer::restore_requests(store, self, v0, committed_at)
            }
        }
    }

    /// Instant restore. Returns the version readers see afterwards.
    pub fn restore(
        &self,
        store: &mut ObjectStore,
        v0: VersionRef,
        at: Millis,
    ) -> Result<VersionRef, FormatError> {
        for p in self.restore_requests(store, v0, at)? {
            store.put(p.key, p.payload, at, 0);
        }
        self.read_version(store)
    }

    /// Data files under the table path that no committed version references.
    pub fn find_orphans(&self, store: &ObjectStore) -> Result<Vec<ObjectKey>, FormatError> {
        let referenced = self.referenced_files(store)?;
        Ok(self
            .listed_data_files(store)
            .into_iter()
            .filter(|k| !referenced.contains(k))
            .collect())
    }

    /// Part files physically present under the table path.
    pub fn listed_data_files(&self, store: &ObjectStore) -> Vec<ObjectKey> {
        let prefix = self.data_prefix();
        store
            .list_prefix(&prefix)
            .into_iter()
            .filter(|k| {
                let rest = &k.as_str()[prefix.len()..];
                !rest.contains('/') && is_part_file(rest)
            })
            .collect()
    }

    /// Deletes exactly the orphaned data files. There is no retention
    /// window, so running this next to an in-flight write deletes its files.
    pub fn vacuum(&self, store: &mut ObjectStore, at: Millis) -> Result<usize, FormatError> {
        let orphans = self.find_orphans(store)?;
        for k in &orphans {
            store.delete(k, at);
        }
        Ok(orphans.len())
    }
}

fn sum_rows(store: &ObjectStore, files: &BTreeSet<ObjectKey>) -> Result<u64, FormatError> {
    files.iter().try_fold(0u64, |acc, k| {
        let payload = store
            .get(k)
            .ok_or_else(|| corrupt(k, "referenced data file is missing"))?;
        Ok(acc + DataFileHeader::parse(k, payload)?.rows)
    })
}

/// What one write job intends to put.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WritePlan {
    pub run_id: String,
    pub table: Table,
    pub files: Vec<DataFile>,
    pub timing: TimingProfile,
}

impl WritePlan {
    /// Splits `rows` and `bytes` evenly over `file_count` part files, with the
    /// remainder in the last one.
    pub fn new(
        table: &Table,
        run_id: impl Into<String>,
        rows: u64,
        bytes: u64,
        file_count: usize,
        timing: TimingProfile,
    ) -> Self {
        let run_id = run_id.into();
        let n = file_count as u64;
        let files = (0..file_count)
            .map(|i| {
                let last = i + 1 == file_count;
                let share = |total: u64| {
                    let each = total / n;
                    if last {
                        total - each * (n - 1)
                    } else {
                        each
                    }
                };
                DataFile {
                    key: table.data_file_key(&run_id, i as u32),
                    row_count: share(rows),
                    byte_size: share(bytes),
                }
            })
            .collect();
        Self {
            run_id,
            table: table.clone(),
            files,
            timing,
        }
    }

    pub fn total_rows(&self) -> u64 {
        self.files.iter().map(|f| f.row_count).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.files.iter().map(|f| f.byte_size).sum()
    }

    pub fn keys(&self) -> impl Iterator<Item = &ObjectKey> {
        self.files.iter().map(|f| &f.key)
    }
}

/// Phase one: put every data file, in order. Records `t_d` on the job trace.
/// A kill leaves a strict prefix of the files durable and no metadata touched.
pub fn phase1_write_data(
    store: &mut ObjectStore,
    plan: &WritePlan,
    job: &mut Job,
) -> Result<Vec<ObjectKey>, Killed> {
    let durations = plan.timing.data_put_durations(plan.files.len());
    let mut written = Vec::with_capacity(plan.files.len());
    for (i, (file, duration)) in plan.files.iter().zip(durations).enumerate() {
        let header = DataFileHeader {
            run_id: plan.run_id.clone(),
            index: i as u32,
            rows: file.row_count,
            bytes: file.byte_size,
        };
        job.put(
            store,
            &format!("data:put {}", file.key.file_name()),
            file.key.clone(),
            header.payload(),
            duration,
        )?;
        written.push(file.key.clone());
    }
    let now = job.now();
    job.trace_mut().t_d = Some(now);
    Ok(written)
}

/// Phase two: make the plan's files visible. Records `t_c` when the final
/// metadata put lands. A kill before that leaves the table unchanged and
/// raises nothing; a detected concurrent commit is a visible error.
pub fn phase2_commit(
    store: &mut ObjectStore,
    plan: &WritePlan,
    base: VersionRef,
    job: &mut Job,
) -> Result<VersionRef, JobFailure> {
    let v = match plan.table.format {
        TableFormat::LogAppend => log_append::commit(store, plan, base, job)?,
        TableFormat::SnapshotPointer => snapshot_pointer::commit(store, plan, base, job)?,
    };
    let now = job.now();
    job.trace_mut().t_c = Some(now);
    Ok(v)
}

pub(crate) fn visible(e: FormatError) -> JobFailure {
    JobFailure::Visible(e.to_string())
}
