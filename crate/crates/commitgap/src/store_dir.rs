//! Store contents as a directory tree, one file per object.
//!
//! Modelled data files keep only their descriptor bytes; the file is then
//! extended to the logical length, which most filesystems store sparsely.
//! An index file records each object's materialized length and completion
//! instant so a load reproduces the store exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::{Component, Path, PathBuf};

use commitgap_core::store::{ObjectKey, ObjectStore, Payload};
use commitgap_core::time::Millis;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const INDEX_FILE: &str = ".objects.json";

#[derive(Debug, Error)]
pub enum StoreDirError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("index {path}: {source}")]
    Index {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("object key {0:?} does not map to a relative path")]
    UnsafeKey(String),
    #[error("object {key}: expected {expected} bytes on disk, found {found}")]
    Length { key: String, expected: u64, found: u64 },
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    key: String,
    materialized: u64,
    len: u64,
    put_completed_at: Millis,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreDirError + '_ {
    move |source| StoreDirError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn relative(key: &str) -> Result<PathBuf, StoreDirError> {
    let p = PathBuf::from(key);
    let ok = p.components().all(|c| matches!(c, Component::Normal(_)));
    if !ok || key == INDEX_FILE {
        return Err(StoreDirError::UnsafeKey(key.to_string()));
    }
    Ok(p)
}

/// Writes every live object under `dir`. Returns the number of objects.
pub fn dump(store: &ObjectStore, dir: &Path) -> Result<usize, StoreDirError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut index = Vec::new();
    for obj in store.objects() {
        let path = dir.join(relative(obj.key.as_str())?);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let mut f = fs::File::create(&path).map_err(io_err(&path))?;
        f.write_all(obj.payload.bytes()).map_err(io_err(&path))?;
        f.set_len(obj.payload.len()).map_err(io_err(&path))?;
        index.push(IndexEntry {
            key: obj.key.as_str().to_string(),
            materialized: obj.payload.bytes().len() as u64,
            len: obj.payload.len(),
            put_completed_at: obj.put_completed_at,
        });
    }
    let path = dir.join(INDEX_FILE);
    let text = serde_json::to_vec_pretty(&index).expect("index serializes");
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(index.len())
}

/// Rebuilds a store from a directory written by [`dump`]. The op log of the
/// result holds one completed put per object.
pub fn load(dir: &Path) -> Result<ObjectStore, StoreDirError> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read(&path).map_err(io_err(&path))?;
    let mut index: Vec<IndexEntry> =
        serde_json::from_slice(&text).map_err(|source| StoreDirError::Index {
            path: path.clone(),
            source,
        })?;
    index.sort_by(|a, b| (a.put_completed_at, &a.key).cmp(&(b.put_completed_at, &b.key)));
    let mut store = ObjectStore::new();
    for e in index {
        let path = dir.join(relative(&e.key)?);
        let f = fs::File::open(&path).map_err(io_err(&path))?;
        let on_disk = f.metadata().map_err(io_err(&path))?.len();
        if on_disk != e.len {
            return Err(StoreDirError::Length {
                key: e.key,
                expected: e.len,
                found: on_disk,
            });
        }
        let mut bytes = Vec::with_capacity(e.materialized as usize);
        f.take(e.materialized)
            .read_to_end(&mut bytes)
            .map_err(io_err(&path))?;
        let payload = if e.len > e.materialized {
            Payload::sparse(bytes, e.len)
        } else {
            Payload::new(bytes)
        };
        let key = ObjectKey::new(e.key.clone()).map_err(|_| StoreDirError::UnsafeKey(e.key))?;
        store.put(key, payload, e.put_completed_at, 0);
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_sparse_payloads() {
        let mut store = ObjectStore::new();
        let k = |s: &str| ObjectKey::new(s).unwrap();
        store.put(k("t/_delta_log/0.json"), "{\"a\":1}", 0, 5);
        store.put(k("t/part-0.parquet"), Payload::sparse(b"hdr\n".to_vec(), 3_000_000), 5, 10);
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(dump(&store, dir.path()).unwrap(), 2);
        let on_disk = fs::metadata(dir.path().join("t/part-0.parquet")).unwrap().len();
        assert_eq!(on_disk, 3_000_000);

        let back = load(dir.path()).unwrap();
        assert_eq!(back.snapshot(), store.snapshot());
        let obj = back.get_object(&k("t/part-0.parquet")).unwrap();
        assert_eq!(obj.put_completed_at, 15);
        assert!(obj.payload.is_sparse());
    }

    #[test]
    fn rejects_escaping_keys() {
        assert!(relative("../etc/passwd").is_err());
        assert!(relative("/abs").is_err());
        assert!(relative(INDEX_FILE).is_err());
        assert!(relative("a/b.json").is_ok());
    }

    #[test]
    fn detects_truncated_object() {
        let mut store = ObjectStore::new();
        store.put(ObjectKey::new("x/y").unwrap(), "hello", 0, 1);
        let dir = tempfile::tempdir().unwrap();
        dump(&store, dir.path()).unwrap();
        fs::write(dir.path().join("x/y"), "hel").unwrap();
        assert!(matches!(load(dir.path()), Err(StoreDirError::Length { .. })));
    }
}
