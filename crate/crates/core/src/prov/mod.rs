//! PROV-style provenance: node and relation types, the per-event mapping and
//! the PROV-JSON codec.

mod json;
mod map;
pub mod node_ids;

pub use json::{from_prov_json, to_prov_json, ProvJsonError};
pub use map::{map_event, ProvContext};

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ids::{InstanceId, NodeId};
use crate::time::Timestamp;

pub type Attrs = BTreeMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityKind {
    Artifact,
    PolicyDraft,
    Dataset,
    TokenPayload,
    Comment,
    MetaModelDoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActivityType {
    TaskExecution,
    Decision,
    TokenDispatch,
    TokenReceipt,
    PhaseTransition,
    LoopBack,
    InstanceCreation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentType {
    Person,
    Department,
    SoftwareAgent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RelationKind {
    Used,
    WasGeneratedBy,
    WasAssociatedWith,
    WasAttributedTo,
    WasDerivedFrom,
    WasInformedBy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Entity,
    Activity,
    Agent,
}

impl RelationKind {
    pub const ALL: [RelationKind; 6] = [
        Self::Used,
        Self::WasGeneratedBy,
        Self::WasAssociatedWith,
        Self::WasAttributedTo,
        Self::WasDerivedFrom,
        Self::WasInformedBy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Used => "used",
            Self::WasGeneratedBy => "wasGeneratedBy",
            Self::WasAssociatedWith => "wasAssociatedWith",
            Self::WasAttributedTo => "wasAttributedTo",
            Self::WasDerivedFrom => "wasDerivedFrom",
            Self::WasInformedBy => "wasInformedBy",
        }
    }

    /// Node classes of (source, target).
    pub fn signature(self) -> (NodeClass, NodeClass) {
        use NodeClass::*;
        match self {
            Self::Used => (Activity, Entity),
            Self::WasGeneratedBy => (Entity, Activity),
            Self::WasAssociatedWith => (Activity, Agent),
            Self::WasAttributedTo => (Entity, Agent),
            Self::WasDerivedFrom => (Entity, Entity),
            Self::WasInformedBy => (Activity, Activity),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvEntity {
    pub id: NodeId,
    pub kind: EntityKind,
    pub generated_at: Timestamp,
    pub attributes: Attrs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvActivity {
    pub id: NodeId,
    #[serde(rename = "type")]
    pub activity_type: ActivityType,
    pub started_at: Timestamp,
    pub ended_at: Option<Timestamp>,
    pub attributes: Attrs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvAgent {
    pub id: NodeId,
    #[serde(rename = "type")]
    pub agent_type: AgentType,
    pub attributes: Attrs,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvRelation {
    pub kind: RelationKind,
    pub source: NodeId,
    pub target: NodeId,
    pub role: Option<String>,
    pub at: Option<Timestamp>,
}

impl ProvRelation {
    pub fn new(kind: RelationKind, source: NodeId, target: NodeId) -> Self {
        Self { kind, source, target, role: None, at: None }
    }

    pub fn key(&self) -> EdgeKey {
        (self.kind, self.source.clone(), self.target.clone())
    }
}

pub type EdgeKey = (RelationKind, NodeId, NodeId);

/// Inclusive range of engine event seqs a document covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqRange {
    pub first: u64,
    pub last: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleHeader {
    pub id: String,
    pub instance_id: Option<InstanceId>,
    pub source_seq: Option<SeqRange>,
    pub emitted_at: Option<Timestamp>,
    pub event_type: Option<String>,
}

/// A bundle of provenance statements; one per engine event when emitted by
/// the capture pipeline, or a whole subgraph when exported.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProvDocument {
    pub header: BundleHeader,
    pub entities: Vec<ProvEntity>,
    pub activities: Vec<ProvActivity>,
    pub agents: Vec<ProvAgent>,
    pub relations: Vec<ProvRelation>,
}

impl ProvDocument {
    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.activities.is_empty() && self.agents.is_empty() && self.relations.is_empty()
    }

    /// (instance, source seq) idempotency key of a capture bundle.
    pub fn key(&self) -> Option<(InstanceId, u64)> {
        Some((self.header.instance_id.clone()?, self.header.source_seq?.first))
    }
}

impl Serialize for ProvDocument {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        to_prov_json(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ProvDocument {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(d)?;
        from_prov_json(&value).map_err(serde::de::Error::custom)
    }
}
