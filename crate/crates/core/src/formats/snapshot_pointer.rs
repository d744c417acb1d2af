//! Snapshot-pointer layout. Manifests and manifest lists carry the Avro file
//! extensions of the real format but are stored as JSON.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{
    artifact_uuid, corrupt, key, visible, DataFile, FormatError, PutRequest, Table, VersionRef,
    WritePlan,
};
use crate::faultproc::{Job, JobFailure};
use crate::store::{ObjectKey, ObjectStore};
use crate::time::Millis;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ManifestFile {
    pub snapshot_id: u64,
    pub data_files: Vec<DataFile>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ManifestList {
    pub snapshot_id: u64,
    pub manifests: Vec<ObjectKey>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SnapshotSummary {
    pub snapshot_id: u64,
    pub parent_snapshot_id: Option<u64>,
    pub manifest_list: ObjectKey,
    pub timestamp_ms: Millis,
}

/// Contents of `metadata/v<N>.metadata.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TableMetadata {
    pub format_version: u32,
    pub location: String,
    pub current_snapshot_id: u64,
    pub snapshots: Vec<SnapshotSummary>,
    pub last_updated_ms: Millis,
}

impl TableMetadata {
    pub fn key(table: &Table, n: u64) -> ObjectKey {
        key(format!("{}/metadata/v{n}.metadata.json", table.path))
    }

    fn snapshot(&self, table: &Table, id: u64) -> Result<&SnapshotSummary, FormatError> {
        self.snapshots
            .iter()
            .find(|s| s.snapshot_id == id)
            .ok_or_else(|| FormatError::UnknownVersion {
                table: table.path.clone(),
                version: table.version(id),
            })
    }

    fn next_snapshot_id(&self) -> u64 {
        self.snapshots.iter().map(|s| s.snapshot_id).max().unwrap_or(0) + 1
    }

    fn request(&self, table: &Table, n: u64) -> PutRequest {
        PutRequest {
            key: Self::key(table, n),
            payload: serde_json::to_vec(self).expect("metadata serializes").into(),
        }
    }
}

pub fn version_hint_key(table: &Table) -> ObjectKey {
    key(format!("{}/metadata/version-hint.text", table.path))
}

fn hint_request(table: &Table, n: u64) -> PutRequest {
    PutRequest {
        key: version_hint_key(table),
        payload: n.to_string().into(),
    }
}

fn json_request<T: Serialize>(k: ObjectKey, value: &T) -> PutRequest {
    PutRequest {
        key: k,
        payload: serde_json::to_vec(value).expect("serializes").into(),
    }
}

fn manifest_key(table: &Table, run_id: &str) -> ObjectKey {
    key(format!(
        "{}/metadata/{}-m0.avro",
        table.path,
        artifact_uuid(run_id, "manifest")
    ))
}

fn manifest_list_key(table: &Table, snapshot_id: u64, salt: &str) -> ObjectKey {
    key(format!(
        "{}/metadata/snap-{snapshot_id}-{}.avro",
        table.path,
        artifact_uuid(salt, "manifest-list")
    ))
}

pub(super) fn exists(store: &ObjectStore, table: &Table) -> bool {
    store.contains(&version_hint_key(table))
}

pub(super) fn create_requests(table: &Table, at: Millis) -> Vec<PutRequest> {
    let list_key = manifest_list_key(table, 1, &table.path);
    let list = ManifestList {
        snapshot_id: 1,
        manifests: Vec::new(),
    };
    let meta = TableMetadata {
        format_version: 2,
        location: table.path.clone(),
        current_snapshot_id: 1,
        snapshots: vec![SnapshotSummary {
            snapshot_id: 1,
            parent_snapshot_id: None,
            manifest_list: list_key.clone(),
            timestamp_ms: at,
        }],
        last_updated_ms: at,
    };
    vec![
        json_request(list_key, &list),
        meta.request(table, 1),
        hint_request(table, 1),
    ]
}

/// Metadata version named by the hint, and that metadata document.
pub(super) fn current_metadata(
    store: &ObjectStore,
    table: &Table,
) -> Result<(u64, TableMetadata), FormatError> {
    let hint_key = version_hint_key(table);
    let text = store
        .get_text(&hint_key)
        .ok_or_else(|| FormatError::TableNotFound(table.path.clone()))?;
    let n: u64 = text.trim().parse().map_err(|e| corrupt(&hint_key, e))?;
    let meta_key = TableMetadata::key(table, n);
    let payload = store
        .get(&meta_key)
        .ok_or_else(|| corrupt(&hint_key, "names a missing metadata object"))?;
    let meta = serde_json::from_slice(payload.bytes()).map_err(|e| corrupt(&meta_key, e))?;
    Ok((n, meta))
}

pub(super) fn current_snapshot(store: &ObjectStore, table: &Table) -> Result<u64, FormatError> {
    current_metadata(store, table).map(|(_, m)| m.current_snapshot_id)
}

pub(super) fn snapshot_ids(store: &ObjectStore, table: &Table) -> Result<Vec<u64>, FormatError> {
    let (_, meta) = current_metadata(store, table)?;
    let mut ids: Vec<u64> = meta.snapshots.iter().map(|s| s.snapshot_id).collect();
    ids.sort_unstable();
    Ok(ids)
}

fn read_json<T: for<'de> Deserialize<'de>>(
    store: &ObjectStore,
    k: &ObjectKey,
) -> Result<T, FormatError> {
    let payload = store.get(k).ok_or_else(|| corrupt(k, "referenced object is missing"))?;
    serde_json::from_slice(payload.bytes()).map_err(|e| corrupt(k, e))
}

fn manifests_of(store: &ObjectStore, snap: &SnapshotSummary) -> Result<Vec<ObjectKey>, FormatError> {
    read_json::<ManifestList>(store, &snap.manifest_list).map(|l| l.manifests)
}

fn files_of(store: &ObjectStore, snap: &SnapshotSummary) -> Result<BTreeSet<ObjectKey>, FormatError> {
    let mut files = BTreeSet::new();
    for m in manifests_of(store, snap)? {
        let manifest: ManifestFile = read_json(store, &m)?;
        files.extend(manifest.data_files.into_iter().map(|f| f.key));
    }
    Ok(files)
}

pub(super) fn files_at(
    store: &ObjectStore,
    table: &Table,
    v: VersionRef,
) -> Result<BTreeSet<ObjectKey>, FormatError> {
    let (_, meta) = current_metadata(store, table)?;
    files_of(store, meta.snapshot(table, v.value)?)
}

pub(super) fn referenced_files(
    store: &ObjectStore,
    table: &Table,
) -> Result<BTreeSet<ObjectKey>, FormatError> {
    let (_, meta) = current_metadata(store, table)?;
    let mut all = BTreeSet::new();
    for snap in &meta.snapshots {
        all.extend(files_of(store, snap)?);
    }
    Ok(all)
}

/// New metadata version that makes `v0` current, then the pointer swap.
pub(super) fn restore_requests(
    store: &ObjectStore,
    table: &Table,
    v0: VersionRef,
    committed_at: Millis,
) -> Result<Vec<PutRequest>, FormatError> {
    let (n, mut meta) = current_metadata(store, table)?;
    meta.snapshot(table, v0.value)?;
    meta.current_snapshot_id = v0.value;
    meta.last_updated_ms = committed_at;
    Ok(vec![meta.request(table, n + 1), hint_request(table, n + 1)])
}

/// Manifest, manifest list, metadata, version hint. Only the last put
/// changes what readers see.
pub(super) fn commit(
    store: &mut ObjectStore,
    plan: &WritePlan,
    base: VersionRef,
    job: &mut Job,
) -> Result<VersionRef, JobFailure> {
    let table = &plan.table;
    let steps = plan.timing.commit_step_durations(table.format);
    let (n, meta) = current_metadata(store, table).map_err(visible)?;
    if table.conflict_check && meta.current_snapshot_id != base.value {
        return Err(visible(FormatError::Conflict {
            table: table.path.clone(),
            expected: base,
            found: table.version(meta.current_snapshot_id),
        }));
    }
    let base_snap = meta.snapshot(table, base.value).map_err(visible)?.clone();
    let snapshot_id = meta.next_snapshot_id();

    let manifest_key = manifest_key(table, &plan.run_id);
    let manifest = ManifestFile {
        snapshot_id,
        data_files: plan.files.clone(),
    };
    let mut manifests = manifests_of(store, &base_snap).map_err(visible)?;
    manifests.push(manifest_key.clone());
    let list_key = manifest_list_key(table, snapshot_id, &plan.run_id);
    let list = ManifestList {
        snapshot_id,
        manifests,
    };
    let committed_at = job.now() + steps.iter().sum::<Millis>();
    let mut new_meta = meta;
    new_meta.snapshots.push(SnapshotSummary {
        snapshot_id,
        parent_snapshot_id: Some(base.value),
        manifest_list: list_key.clone(),
        timestamp_ms: committed_at,
    });
    new_meta.current_snapshot_id = snapshot_id;
    new_meta.last_updated_ms = committed_at;

    let puts = [
        ("commit:put_manifest", json_request(manifest_key, &manifest)),
        ("commit:put_manifest_list", json_request(list_key, &list)),
        ("commit:put_metadata", new_meta.request(table, n + 1)),
        ("commit:put_version_hint", hint_request(table, n + 1)),
    ];
    for ((name, req), duration) in puts.into_iter().zip(steps) {
        job.put(store, name, req.key, req.payload, duration)?;
    }
    Ok(table.version(snapshot_id))
}
