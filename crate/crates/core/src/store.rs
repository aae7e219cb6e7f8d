//! The distributed particle cache: a bounded node-local cache per runner
//! plus a shared global store directory, with atomic-commit state files and
//! prefetch bookkeeping.
//!
//! Eviction is never decided locally. When a runner needs a slot it asks the
//! server, which picks the victim from its mirror of the cache contents; the
//! cache here only enforces the safety rules (only persisted, unpinned
//! entries may go) and the capacity bound (at most one transient overflow
//! slot while an eviction directive is in flight).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::StateVector;
use crate::statefile::{self, StateFileError};

/// Identity of one propagation result: the state of particle `index` after
/// cycle `cycle`. Lexicographic order on (cycle, index).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct ParticleId {
    pub cycle: u64,
    pub index: u64,
}

impl ParticleId {
    pub fn new(cycle: u64, index: u64) -> Self {
        ParticleId { cycle, index }
    }
}

impl fmt::Display for ParticleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.cycle, self.index)
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("cache full (capacity {capacity}) and no eviction granted")]
    CacheFull { capacity: usize },
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("state {0} not found in global store")]
    NotFound(ParticleId),
    #[error("state file error: {0}")]
    File(#[from] StateFileError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One cached state. `persisted` flips to true once the state is safely on
/// the global store; only persisted, unpinned entries are evictable.
#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub id: ParticleId,
    pub state: Arc<StateVector>,
    pub persisted: bool,
    pub pinned: bool,
}

/// Bounded node-local cache owned by one runner.
#[derive(Debug)]
pub struct LocalCache {
    capacity: usize,
    entries: BTreeMap<ParticleId, CacheEntry>,
    overflow_in_flight: bool,
    hits: u64,
    misses: u64,
}

impl LocalCache {
    pub fn new(capacity: usize) -> Self {
        LocalCache {
            capacity,
            entries: BTreeMap::new(),
            overflow_in_flight: false,
            hits: 0,
            misses: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn contains(&self, id: &ParticleId) -> bool {
        self.entries.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &ParticleId> {
        self.entries.keys()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    /// True while the one transient overflow slot is occupied.
    pub fn over_capacity(&self) -> bool {
        self.entries.len() > self.capacity
    }

    /// Whether a plain insert would currently be admitted.
    pub fn has_free_slot(&self) -> bool {
        self.entries.len() < self.capacity
    }

    /// Insert a freshly propagated (not yet persisted) state. Re-inserting
    /// the same id is a no-op.
    pub fn put(&mut self, id: ParticleId, state: Arc<StateVector>) -> Result<(), StoreError> {
        self.insert(id, state, false, false)
    }

    /// Insert a state loaded from the global store (already persisted).
    pub fn put_persisted(
        &mut self,
        id: ParticleId,
        state: Arc<StateVector>,
    ) -> Result<(), StoreError> {
        self.insert(id, state, true, false)
    }

    /// Insert allowing the single transient capacity+1 overflow. Only legal
    /// while an eviction directive has been requested and is in flight.
    pub fn put_overflow(
        &mut self,
        id: ParticleId,
        state: Arc<StateVector>,
        persisted: bool,
    ) -> Result<(), StoreError> {
        if self.entries.contains_key(&id) {
            return Ok(());
        }
        if self.entries.len() >= self.capacity + 1 {
            return Err(StoreError::CacheFull {
                capacity: self.capacity,
            });
        }
        if self.entries.len() == self.capacity {
            self.overflow_in_flight = true;
        }
        self.entries.insert(
            id,
            CacheEntry {
                id,
                state,
                persisted,
                pinned: false,
            },
        );
        Ok(())
    }

    fn insert(
        &mut self,
        id: ParticleId,
        state: Arc<StateVector>,
        persisted: bool,
        pinned: bool,
    ) -> Result<(), StoreError> {
        if self.entries.contains_key(&id) {
            return Ok(());
        }
        if self.entries.len() >= self.capacity {
            return Err(StoreError::CacheFull {
                capacity: self.capacity,
            });
        }
        self.entries.insert(
            id,
            CacheEntry {
                id,
                state,
                persisted,
                pinned,
            },
        );
        Ok(())
    }

    /// Look up a state, counting the hit or miss.
    pub fn get(&mut self, id: &ParticleId) -> Option<Arc<StateVector>> {
        match self.entries.get(id) {
            Some(entry) => {
                self.hits += 1;
                Some(Arc::clone(&entry.state))
            }
            None => {
                self.misses += 1;
                None
            }
        }
    }

    /// Look up without touching the hit/miss counters.
    pub fn peek(&self, id: &ParticleId) -> Option<Arc<StateVector>> {
        self.entries.get(id).map(|e| Arc::clone(&e.state))
    }

    pub fn mark_persisted(&mut self, id: &ParticleId) {
        if let Some(entry) = self.entries.get_mut(id) {
            entry.persisted = true;
        }
    }

    pub fn set_pinned(&mut self, id: &ParticleId, pinned: bool) {
        if let Some(entry) = self.entries.get_mut(id) {
            entry.pinned = pinned;
        }
    }

    pub fn is_persisted(&self, id: &ParticleId) -> bool {
        self.entries.get(id).map(|e| e.persisted).unwrap_or(false)
    }

    /// Remove an entry on a server eviction directive. Evicting an entry
    /// that is not persisted, or is pinned, is a protocol violation: the
    /// server must never select such a state.
    pub fn evict(&mut self, id: &ParticleId) -> Result<(), StoreError> {
        let entry = self.entries.get(id).ok_or_else(|| {
            StoreError::ProtocolViolation(format!("eviction directive for absent entry {id}"))
        })?;
        if !entry.persisted {
            return Err(StoreError::ProtocolViolation(format!(
                "eviction directive for non-persisted entry {id}"
            )));
        }
        if entry.pinned {
            return Err(StoreError::ProtocolViolation(format!(
                "eviction directive for pinned entry {id}"
            )));
        }
        self.entries.remove(id);
        if self.entries.len() <= self.capacity {
            self.overflow_in_flight = false;
        }
        Ok(())
    }

    /// Forced removal used by prefetch cancellation; no persistence guard
    /// because a cancelled prefetch entry always came from the global store.
    pub fn remove(&mut self, id: &ParticleId) -> bool {
        self.entries.remove(id).is_some()
    }
}

/// Shared global store: one directory per cycle, one state file per index,
/// committed by write-to-temp + rename so readers never observe partial
/// states.
#[derive(Debug, Clone)]
pub struct GlobalStore {
    root: PathBuf,
}

impl GlobalStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        GlobalStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn state_path(&self, id: ParticleId) -> PathBuf {
        self.root
            .join(format!("cycle_{}", id.cycle))
            .join(format!("state_{}.bin", id.index))
    }

    pub fn exists(&self, id: ParticleId) -> bool {
        self.state_path(id).is_file()
    }

    /// Persist a state. Idempotent: if a committed file for this id already
    /// exists and verifies, nothing is rewritten.
    pub fn store(&self, id: ParticleId, state: &StateVector) -> Result<(), StoreError> {
        let path = self.state_path(id);
        if path.is_file() && statefile::read_file(&path).is_ok() {
            return Ok(());
        }
        let dir = path.parent().expect("state path has parent");
        std::fs::create_dir_all(dir)?;
        let bytes = statefile::encode(id, &state.0);
        let tmp = dir.join(format!(".state_{}.tmp.{}", id.index, std::process::id()));
        std::fs::write(&tmp, &bytes)?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }

    /// Load and verify a state.
    pub fn load(&self, id: ParticleId) -> Result<StateVector, StoreError> {
        let path = self.state_path(id);
        if !path.is_file() {
            return Err(StoreError::NotFound(id));
        }
        let (file_id, values) = statefile::read_file(&path)?;
        if file_id != id {
            return Err(StoreError::ProtocolViolation(format!(
                "state file {path:?} carries id {file_id}, expected {id}"
            )));
        }
        Ok(StateVector(values))
    }
}

/// Prefetch bookkeeping for one runner's helper worker. The helper performs
/// the actual loads; this tracks which parents are pending, done, or
/// cancelled so that cancellation has well-defined semantics in every
/// interleaving.
#[derive(Debug, Default)]
pub struct PrefetchBook {
    status: BTreeMap<ParticleId, PrefetchStatus>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrefetchStatus {
    Pending,
    Done,
    Cancelled,
}

/// What a cancellation request amounted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CancelOutcome {
    /// The load had not run yet; it never will.
    PreventedPending,
    /// The load had completed; the cache entry was removed.
    RemovedCompleted,
    /// Already cancelled or never tracked; nothing to do.
    Noop,
}

impl PrefetchBook {
    /// Register a hint. Returns false when the parent is already pending or
    /// done (duplicate hints are no-ops).
    pub fn begin(&mut self, id: ParticleId) -> bool {
        match self.status.get(&id) {
            Some(PrefetchStatus::Pending) | Some(PrefetchStatus::Done) => false,
            _ => {
                self.status.insert(id, PrefetchStatus::Pending);
                true
            }
        }
    }

    pub fn status(&self, id: &ParticleId) -> Option<PrefetchStatus> {
        self.status.get(id).copied()
    }

    /// Should the helper still perform the load for this id?
    pub fn should_load(&self, id: &ParticleId) -> bool {
        matches!(self.status.get(id), Some(PrefetchStatus::Pending))
    }

    /// Mark the load complete (the entry is in the cache).
    pub fn complete(&mut self, id: ParticleId) {
        if matches!(self.status.get(&id), Some(PrefetchStatus::Pending)) {
            self.status.insert(id, PrefetchStatus::Done);
        }
    }

    /// The model consumed the prefetched entry; forget the record.
    pub fn consume(&mut self, id: &ParticleId) {
        self.status.remove(id);
    }

    /// Cancel a prefetch. If it already completed, the caller must remove
    /// the cache entry (signalled by `RemovedCompleted`).
    pub fn cancel(&mut self, id: ParticleId, cache: &mut LocalCache) -> CancelOutcome {
        match self.status.get(&id) {
            Some(PrefetchStatus::Pending) => {
                self.status.insert(id, PrefetchStatus::Cancelled);
                CancelOutcome::PreventedPending
            }
            Some(PrefetchStatus::Done) => {
                self.status.insert(id, PrefetchStatus::Cancelled);
                if cache.remove(&id) {
                    CancelOutcome::RemovedCompleted
                } else {
                    CancelOutcome::Noop
                }
            }
            Some(PrefetchStatus::Cancelled) => CancelOutcome::Noop,
            None => CancelOutcome::Noop,
        }
    }
}
