use alloc::collections::{BTreeSet, VecDeque};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::graph::{NodeData, ProvGraph};
use crate::ids::{AgentId, InstanceId, NodeId, PhaseId};
use crate::prov::{node_ids, ActivityType, ProvActivity, RelationKind};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("unknown entity {0}")]
    UnknownEntity(NodeId),
}

/// One activity with its attached agents and entities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrailEntry {
    pub activity: ProvActivity,
    pub store_seq: u64,
    pub agents: Vec<NodeId>,
    pub used: Vec<NodeId>,
    pub generated: Vec<NodeId>,
    pub informed_by: Vec<NodeId>,
}

/// Conjunction of the fields that are set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityFilter {
    pub instance: Option<InstanceId>,
    pub agent: Option<AgentId>,
    pub phase: Option<PhaseId>,
    pub activity_type: Option<ActivityType>,
    /// Inclusive bounds on the activity start time.
    pub from: Option<Timestamp>,
    pub to: Option<Timestamp>,
}

/// Accepts either a bare agent id or an `agent:` node id.
fn agent_node(agent: &AgentId) -> NodeId {
    if agent.as_str().starts_with("agent:") {
        NodeId::new(agent.as_str())
    } else {
        node_ids::agent(agent)
    }
}

const ANCESTRY: [RelationKind; 4] =
    [RelationKind::WasGeneratedBy, RelationKind::Used, RelationKind::WasDerivedFrom, RelationKind::WasInformedBy];
const ATTACHMENTS: [RelationKind; 2] = [RelationKind::WasAssociatedWith, RelationKind::WasAttributedTo];

impl ProvGraph {
    /// Ancestor subgraph of an entity plus the agents attached to it.
    pub fn lineage(&self, entity: &NodeId) -> Result<ProvGraph, QueryError> {
        match self.node(entity) {
            Some(n) if matches!(n.data, NodeData::Entity(_)) => {}
            _ => return Err(QueryError::UnknownEntity(entity.clone())),
        }
        let mut keep: BTreeSet<NodeId> = BTreeSet::new();
        let mut queue = VecDeque::from([entity.clone()]);
        keep.insert(entity.clone());
        while let Some(id) = queue.pop_front() {
            for e in self.out_edges(&id).filter(|e| ANCESTRY.contains(&e.relation.kind)) {
                if keep.insert(e.relation.target.clone()) {
                    queue.push_back(e.relation.target.clone());
                }
            }
        }
        let agents: Vec<NodeId> = keep
            .iter()
            .flat_map(|id| self.out_edges(id))
            .filter(|e| ATTACHMENTS.contains(&e.relation.kind))
            .map(|e| e.relation.target.clone())
            .collect();
        keep.extend(agents);
        Ok(self.induced(&keep))
    }

    fn trail_entry(&self, activity: &ProvActivity, store_seq: u64) -> TrailEntry {
        let targets = |kind: RelationKind| -> Vec<NodeId> {
            self.out_edges(&activity.id)
                .filter(|e| e.relation.kind == kind)
                .map(|e| e.relation.target.clone())
                .collect()
        };
        TrailEntry {
            activity: activity.clone(),
            store_seq,
            agents: targets(RelationKind::WasAssociatedWith),
            used: targets(RelationKind::Used),
            generated: self
                .in_edges(&activity.id)
                .filter(|e| e.relation.kind == RelationKind::WasGeneratedBy)
                .map(|e| e.relation.source.clone())
                .collect(),
            informed_by: targets(RelationKind::WasInformedBy),
        }
    }

    fn matches(&self, activity: &ProvActivity, instances: &BTreeSet<InstanceId>, f: &ActivityFilter) -> bool {
        if f.instance.as_ref().is_some_and(|i| !instances.contains(i)) {
            return false;
        }
        if f.activity_type.is_some_and(|t| t != activity.activity_type) {
            return false;
        }
        if f.phase
            .as_ref()
            .is_some_and(|p| activity.attributes.get("pcp:phase").map(|s| s.as_str()) != Some(p.as_str()))
        {
            return false;
        }
        if f.from.is_some_and(|from| activity.started_at < from) || f.to.is_some_and(|to| activity.started_at > to) {
            return false;
        }
        if let Some(agent) = &f.agent {
            let node = agent_node(agent);
            let associated = self
                .out_edges(&activity.id)
                .any(|e| e.relation.kind == RelationKind::WasAssociatedWith && e.relation.target == node);
            if !associated {
                return false;
            }
        }
        true
    }

    /// Activities matching `filter`, ordered by (started_at, store_seq).
    pub fn query(&self, filter: &ActivityFilter) -> Vec<TrailEntry> {
        let mut out: Vec<TrailEntry> = self
            .nodes()
            .filter_map(|n| match &n.data {
                NodeData::Activity(a) if self.matches(a, &n.instances, filter) => Some(self.trail_entry(a, n.origin)),
                _ => None,
            })
            .collect();
        out.sort_by(|a, b| {
            (a.activity.started_at, a.store_seq, &a.activity.id).cmp(&(
                b.activity.started_at,
                b.store_seq,
                &b.activity.id,
            ))
        });
        out
    }

    /// Chronological activity record of one instance; empty when unknown.
    pub fn audit_trail(&self, instance: &InstanceId) -> Vec<TrailEntry> {
        self.query(&ActivityFilter { instance: Some(instance.clone()), ..Default::default() })
    }
}
