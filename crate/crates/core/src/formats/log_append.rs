use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{corrupt, key, visible, FormatError, PutRequest, Table, VersionRef, WritePlan};
use crate::faultproc::{Job, JobFailure};
use crate::store::{ObjectKey, ObjectStore};
use crate::time::Millis;

/// One numbered entry of the commit log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitEntry {
    pub version: u64,
    pub added_files: Vec<ObjectKey>,
    pub restore_of: Option<u64>,
    pub committed_at: Millis,
}

impl CommitEntry {
    pub fn key(table: &Table, version: u64) -> ObjectKey {
        key(format!("{}/_delta_log/{version:020}.json", table.path))
    }

    fn request(&self, table: &Table) -> PutRequest {
        PutRequest {
            key: Self::key(table, self.version),
            payload: serde_json::to_vec(self).expect("entry serializes").into(),
        }
    }
}

fn log_prefix(table: &Table) -> String {
    format!("{}/_delta_log/", table.path)
}

pub(super) fn exists(store: &ObjectStore, table: &Table) -> bool {
    store.contains(&CommitEntry::key(table, 0))
}

pub(super) fn create_requests(table: &Table, at: Millis) -> Vec<PutRequest> {
    let entry = CommitEntry {
        version: 0,
        added_files: Vec::new(),
        restore_of: None,
        committed_at: at,
    };
    vec![entry.request(table)]
}

pub(super) fn versions(store: &ObjectStore, table: &Table) -> Result<Vec<u64>, FormatError> {
    let prefix = log_prefix(table);
    let mut out = Vec::new();
    for k in store.list_prefix(&prefix) {
        let name = &k.as_str()[prefix.len()..];
        let Some(stem) = name.strip_suffix(".json") else {
            continue;
        };
        if stem.len() != 20 || stem.contains('/') {
            continue;
        }
        let v: u64 = stem.parse().map_err(|e| corrupt(&k, e))?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(FormatError::TableNotFound(table.path.clone()));
    }
    Ok(out)
}

pub(super) fn latest_version(store: &ObjectStore, table: &Table) -> Result<u64, FormatError> {
    versions(store, table).map(|v| *v.last().expect("non-empty"))
}

fn entry(store: &ObjectStore, table: &Table, version: u64) -> Result<CommitEntry, FormatError> {
    let k = CommitEntry::key(table, version);
    let payload = store.get(&k).ok_or_else(|| FormatError::UnknownVersion {
        table: table.path.clone(),
        version: table.version(version),
    })?;
    serde_json::from_slice(payload.bytes()).map_err(|e| corrupt(&k, e))
}

pub(super) fn files_at(
    store: &ObjectStore,
    table: &Table,
    v: VersionRef,
) -> Result<BTreeSet<ObjectKey>, FormatError> {
    let all = versions(store, table)?;
    if !all.contains(&v.value) {
        return Err(FormatError::UnknownVersion {
            table: table.path.clone(),
            version: v,
        });
    }
    let mut live = BTreeSet::new();
    for version in all.into_iter().take_while(|&x| x <= v.value) {
        let e = entry(store, table, version)?;
        if e.restore_of.is_some() {
            live.clear();
        }
        live.extend(e.added_files);
    }
    Ok(live)
}

pub(super) fn referenced_files(
    store: &ObjectStore,
    table: &Table,
) -> Result<BTreeSet<ObjectKey>, FormatError> {
    let mut all = BTreeSet::new();
    for version in versions(store, table)? {
        all.extend(entry(store, table, version)?.added_files);
    }
    Ok(all)
}

pub(super) fn restore_requests(
    store: &ObjectStore,
    table: &Table,
    v0: VersionRef,
    committed_at: Millis,
) -> Result<Vec<PutRequest>, FormatError> {
    let restored = CommitEntry {
        version: latest_version(store, table)? + 1,
        added_files: files_at(store, table, v0)?.into_iter().collect(),
        restore_of: Some(v0.value),
        committed_at,
    };
    Ok(vec![restored.request(table)])
}

/// Conflict check, then a single log entry put. The check observes the log
/// at the end of its step.
pub(super) fn commit(
    store: &mut ObjectStore,
    plan: &WritePlan,
    base: VersionRef,
    job: &mut Job,
) -> Result<VersionRef, JobFailure> {
    let table = &plan.table;
    let steps = plan.timing.commit_step_durations(table.format);
    let current = job.read(store, "commit:conflict_check", steps[0], |s| {
        latest_version(s, table)
    })?;
    let current = current.map_err(visible)?;
    if table.conflict_check && current != base.value {
        return Err(visible(FormatError::Conflict {
            table: table.path.clone(),
            expected: base,
            found: table.version(current),
        }));
    }
    let put_start = job.now();
    let e = CommitEntry {
        version: current + 1,
        added_files: plan.keys().cloned().collect(),
        restore_of: None,
        committed_at: put_start + steps[1],
    };
    let req = e.request(table);
    job.put(store, "commit:put_log_entry", req.key, req.payload, steps[1])?;
    Ok(table.version(e.version))
}
