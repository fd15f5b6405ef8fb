//! The provenance recorder: an append-only record log, the property graph
//! derived from it, and the query primitives over that graph.

mod graph;
mod query;

pub use graph::{GraphEdge, GraphError, GraphNode, NodeData, ProvGraph};
pub use query::{ActivityFilter, QueryError, TrailEntry};

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ids::InstanceId;
use crate::prov::ProvDocument;
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub store_seq: u64,
    pub instance_id: InstanceId,
    pub source_seq: u64,
    pub appended_at: Timestamp,
    pub document: ProvDocument,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("document has no (instance_id, source_seq) header")]
    MissingKey,
    #[error("invalid document: {0}")]
    Invalid(#[from] GraphError),
    #[error("record {position}: {reason}")]
    Corrupt { position: usize, reason: alloc::string::String },
}

/// Result of a successful prepare: either a new record to persist, or the
/// store_seq an identical key was already stored under.
#[derive(Debug, Clone, PartialEq, Eq)]
#[allow(clippy::large_enum_variant)]
pub enum Prepared {
    Fresh(StoreRecord),
    Duplicate(u64),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProvStore {
    records: Vec<StoreRecord>,
    keys: BTreeMap<(InstanceId, u64), u64>,
    graph: ProvGraph,
}

impl ProvStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Validates a document and assigns it the next store_seq without
    /// changing the store. Persist the record, then [`commit`](Self::commit).
    pub fn prepare(&self, document: ProvDocument) -> Result<Prepared, StoreError> {
        let (instance_id, source_seq) = document.key().ok_or(StoreError::MissingKey)?;
        if let Some(&seq) = self.keys.get(&(instance_id.clone(), source_seq)) {
            return Ok(Prepared::Duplicate(seq));
        }
        self.graph.check(&document)?;
        let appended_at = document.header.emitted_at.unwrap_or_default();
        Ok(Prepared::Fresh(StoreRecord {
            store_seq: self.records.len() as u64 + 1,
            instance_id,
            source_seq,
            appended_at,
            document,
        }))
    }

    /// Applies a record produced by [`prepare`](Self::prepare) on this store.
    pub fn commit(&mut self, record: StoreRecord) -> u64 {
        assert_eq!(record.store_seq, self.records.len() as u64 + 1, "records must be committed in prepare order");
        self.graph.merge(&record.document, record.store_seq).expect("prepared documents merge");
        self.keys.insert((record.instance_id.clone(), record.source_seq), record.store_seq);
        let seq = record.store_seq;
        self.records.push(record);
        seq
    }

    /// In-memory append: idempotent on (instance_id, source_seq).
    pub fn append(&mut self, document: ProvDocument) -> Result<u64, StoreError> {
        match self.prepare(document)? {
            Prepared::Duplicate(seq) => Ok(seq),
            Prepared::Fresh(record) => Ok(self.commit(record)),
        }
    }

    /// Rebuilds a store from a log ordered by store_seq.
    pub fn rebuild(log: impl IntoIterator<Item = StoreRecord>) -> Result<Self, StoreError> {
        let mut store = Self::new();
        for (position, record) in log.into_iter().enumerate() {
            let corrupt = |reason: &str| StoreError::Corrupt { position, reason: reason.into() };
            if record.store_seq != store.records.len() as u64 + 1 {
                return Err(corrupt("store_seq is not contiguous"));
            }
            if record.document.key() != Some((record.instance_id.clone(), record.source_seq)) {
                return Err(corrupt("record key disagrees with its document header"));
            }
            if store.keys.contains_key(&(record.instance_id.clone(), record.source_seq)) {
                return Err(corrupt("duplicate (instance_id, source_seq)"));
            }
            if let Err(e) = store.graph.check(&record.document) {
                return Err(StoreError::Corrupt { position, reason: alloc::format!("{e}") });
            }
            store.commit(record);
        }
        Ok(store)
    }

    pub fn records(&self) -> &[StoreRecord] {
        &self.records
    }

    pub fn graph(&self) -> &ProvGraph {
        &self.graph
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Highest source_seq stored for an instance.
    pub fn last_source_seq(&self, instance: &InstanceId) -> Option<u64> {
        self.keys.range((instance.clone(), 0)..=(instance.clone(), u64::MAX)).next_back().map(|((_, s), _)| *s)
    }
}
