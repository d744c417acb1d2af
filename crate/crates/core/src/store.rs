//! In-memory object store with the consistency surface of S3.
//!
//! Puts are atomic per key and become visible at their completion instant.
//! Reads are strongly consistent. There is no way to make two keys change
//! together, which is the property the rest of the simulator exploits.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Millis;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("object keys must be non-empty")]
    EmptyKey,
}

/// Slash-separated object path.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ObjectKey(String);

impl ObjectKey {
    pub fn new(path: impl Into<String>) -> Result<Self, StoreError> {
        let path = path.into();
        if path.is_empty() {
            return Err(StoreError::EmptyKey);
        }
        Ok(Self(path))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Last path segment.
    pub fn file_name(&self) -> &str {
        self.0.rsplit('/').next().unwrap_or(&self.0)
    }
}

impl TryFrom<String> for ObjectKey {
    type Error = StoreError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ObjectKey> for String {
    fn from(key: ObjectKey) -> Self {
        key.0
    }
}

impl core::borrow::Borrow<str> for ObjectKey {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Object body.
///
/// Data files are modelled as a short descriptor followed by filler, so a
/// payload carries its materialized bytes plus a logical length that may be
/// larger. Filler is never materialized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Payload {
    bytes: Vec<u8>,
    len: u64,
}

impl Payload {
    pub fn new(bytes: Vec<u8>) -> Self {
        let len = bytes.len() as u64;
        Self { bytes, len }
    }

    /// A payload of `len` logical bytes whose leading bytes are `header`.
    pub fn sparse(header: Vec<u8>, len: u64) -> Self {
        let len = len.max(header.len() as u64);
        Self { bytes: header, len }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_sparse(&self) -> bool {
        self.len > self.bytes.len() as u64
    }
}

impl From<Vec<u8>> for Payload {
    fn from(bytes: Vec<u8>) -> Self {
        Self::new(bytes)
    }
}

impl From<&str> for Payload {
    fn from(s: &str) -> Self {
        Self::new(s.as_bytes().to_vec())
    }
}

impl From<String> for Payload {
    fn from(s: String) -> Self {
        Self::new(s.into_bytes())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StoredObject {
    pub key: ObjectKey,
    pub payload: Payload,
    pub put_completed_at: Millis,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Op {
    PutBegin { put_id: u64 },
    PutComplete { put_id: u64, payload: Payload },
    PutAbort { put_id: u64 },
    Delete,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpRecord {
    pub op: Op,
    pub key: ObjectKey,
    pub at: Millis,
}

/// A put whose bytes are on the wire. Dropping it without calling
/// [`ObjectStore::complete`] or [`ObjectStore::abort`] leaves the store as if
/// the request never arrived.
#[must_use]
#[derive(Debug)]
pub struct InFlightPut {
    id: u64,
    key: ObjectKey,
    payload: Payload,
    started_at: Millis,
    completes_at: Millis,
}

impl InFlightPut {
    pub fn key(&self) -> &ObjectKey {
        &self.key
    }

    pub fn started_at(&self) -> Millis {
        self.started_at
    }

    pub fn completes_at(&self) -> Millis {
        self.completes_at
    }
}

#[derive(Clone, Debug, Default)]
pub struct ObjectStore {
    objects: BTreeMap<ObjectKey, StoredObject>,
    op_log: Vec<OpRecord>,
    op_log_cap: Option<usize>,
    op_log_truncated: bool,
    next_put_id: u64,
    read_only: Vec<String>,
}

impl ObjectStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stop recording once `cap` operations have been logged.
    pub fn with_op_log_cap(mut self, cap: usize) -> Self {
        self.op_log_cap = Some(cap);
        self
    }

    /// Marks every key under `prefix` as not writable by the caller's
    /// credentials. Advisory: writers consult [`Self::is_writable`] before
    /// starting a put.
    pub fn set_read_only(&mut self, prefix: impl Into<String>) {
        self.read_only.push(prefix.into());
    }

    pub fn is_writable(&self, key: &ObjectKey) -> bool {
        !self.read_only.iter().any(|p| key.as_str().starts_with(p.as_str()))
    }

    fn log(&mut self, op: Op, key: &ObjectKey, at: Millis) {
        if let Some(cap) = self.op_log_cap {
            if self.op_log.len() >= cap {
                self.op_log_truncated = true;
                return;
            }
        }
        self.op_log.push(OpRecord { op, key: key.clone(), at });
    }

    pub fn begin_put(
        &mut self,
        key: ObjectKey,
        payload: impl Into<Payload>,
        start: Millis,
        duration: Millis,
    ) -> InFlightPut {
        let id = self.next_put_id;
        self.next_put_id += 1;
        self.log(Op::PutBegin { put_id: id }, &key, start);
        InFlightPut {
            id,
            key,
            payload: payload.into(),
            started_at: start,
            completes_at: start.saturating_add(duration),
        }
    }

    /// Makes the object visible at its completion instant.
    pub fn complete(&mut self, put: InFlightPut) -> Millis {
        let at = put.completes_at;
        self.log(
            Op::PutComplete {
                put_id: put.id,
                payload: put.payload.clone(),
            },
            &put.key,
            at,
        );
        self.objects.insert(
            put.key.clone(),
            StoredObject {
                key: put.key,
                payload: put.payload,
                put_completed_at: at,
            },
        );
        at
    }

    /// The connection died at `at`; nothing reaches the store.
    pub fn abort(&mut self, put: InFlightPut, at: Millis) {
        self.log(Op::PutAbort { put_id: put.id }, &put.key, at);
    }

    /// Uninterrupted put. Returns the completion instant.
    pub fn put(
        &mut self,
        key: ObjectKey,
        payload: impl Into<Payload>,
        start: Millis,
        duration: Millis,
    ) -> Millis {
        let put = self.begin_put(key, payload, start, duration);
        self.complete(put)
    }

    pub fn get(&self, key: &ObjectKey) -> Option<&Payload> {
        self.objects.get(key).map(|o| &o.payload)
    }

    pub fn get_object(&self, key: &ObjectKey) -> Option<&StoredObject> {
        self.objects.get(key)
    }

    pub fn contains(&self, key: &ObjectKey) -> bool {
        self.objects.contains_key(key)
    }

    /// Keys of completed objects starting with `prefix`, in lexicographic order.
    pub fn list_prefix(&self, prefix: &str) -> Vec<ObjectKey> {
        self.objects
            .range::<str, _>((core::ops::Bound::Included(prefix), core::ops::Bound::Unbounded))
            .take_while(|(k, _)| k.as_str().starts_with(prefix))
            .map(|(k, _)| k.clone())
            .collect()
    }

    /// Idempotent. Returns whether an object was removed.
    pub fn delete(&mut self, key: &ObjectKey, at: Millis) -> bool {
        self.log(Op::Delete, key, at);
        self.objects.remove(key).is_some()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn objects(&self) -> impl Iterator<Item = &StoredObject> {
        self.objects.values()
    }

    pub fn op_log(&self) -> &[OpRecord] {
        &self.op_log
    }

    pub fn op_log_truncated(&self) -> bool {
        self.op_log_truncated
    }

    /// Sum of logical object sizes under `prefix`.
    pub fn total_bytes(&self, prefix: &str) -> u64 {
        self.list_prefix(prefix)
            .iter()
            .filter_map(|k| self.get(k))
            .map(Payload::len)
            .sum()
    }

    /// Contents as seen by a reader at instant `t`, rebuilt from the op log.
    ///
    /// A put completing exactly at `t` is visible at `t`.
    pub fn state_at(&self, t: Millis) -> BTreeMap<ObjectKey, Payload> {
        let mut state = BTreeMap::new();
        for rec in self.op_log.iter().filter(|r| r.at <= t) {
            match &rec.op {
                Op::PutComplete { payload, .. } => {
                    state.insert(rec.key.clone(), payload.clone());
                }
                Op::Delete => {
                    state.remove(&rec.key);
                }
                Op::PutBegin { .. } | Op::PutAbort { .. } => {}
            }
        }
        state
    }

    /// A store holding exactly what a reader saw at `t`, rebuilt from the
    /// op log.
    pub fn at_instant(&self, t: Millis) -> ObjectStore {
        let mut out = ObjectStore::new();
        for rec in self.op_log.iter().filter(|r| r.at <= t) {
            match &rec.op {
                Op::PutComplete { payload, .. } => {
                    out.objects.insert(
                        rec.key.clone(),
                        StoredObject {
                            key: rec.key.clone(),
                            payload: payload.clone(),
                            put_completed_at: rec.at,
                        },
                    );
                }
                Op::Delete => {
                    out.objects.remove(&rec.key);
                }
                Op::PutBegin { .. } | Op::PutAbort { .. } => {}
            }
        }
        out
    }

    /// Current contents as a plain map, for comparison against [`Self::state_at`].
    pub fn snapshot(&self) -> BTreeMap<ObjectKey, Payload> {
        self.objects
            .iter()
            .map(|(k, o)| (k.clone(), o.payload.clone()))
            .collect()
    }

    /// Reads `key` as UTF-8 text.
    pub fn get_text(&self, key: &ObjectKey) -> Option<String> {
        self.get(key)
            .and_then(|p| core::str::from_utf8(p.bytes()).ok())
            .map(ToString::to_string)
    }
}
