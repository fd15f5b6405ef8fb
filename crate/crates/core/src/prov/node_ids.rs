//! Deterministic provenance node ids derived from engine identifiers.

use alloc::format;

use crate::ids::{AgentId, DecisionId, ExecId, InstanceId, NodeId, TokenId};

/// Activity for an event that has no natural owner (creation, phase changes,
/// loop-backs).
pub fn event_activity(instance: &InstanceId, seq: u64) -> NodeId {
    NodeId::new(format!("act:{instance}/e{seq}"))
}

pub fn task_activity(exec: &ExecId) -> NodeId {
    NodeId::new(format!("act:{exec}"))
}

pub fn decision_activity(decision: &DecisionId) -> NodeId {
    NodeId::new(format!("act:{decision}"))
}

pub fn dispatch_activity(token: &TokenId) -> NodeId {
    NodeId::new(format!("act:dispatch:{token}"))
}

pub fn receipt_activity(token: &TokenId) -> NodeId {
    NodeId::new(format!("act:receipt:{token}"))
}

/// Artifacts are namespaced by instance so two instances may reuse a name.
pub fn artifact(instance: &InstanceId, name: &str) -> NodeId {
    NodeId::new(format!("ent:{instance}/{name}"))
}

pub fn token_request(token: &TokenId) -> NodeId {
    NodeId::new(format!("ent:{token}/request"))
}

pub fn token_payload(token: &TokenId) -> NodeId {
    NodeId::new(format!("ent:{token}/payload"))
}

pub fn decision_context(decision: &DecisionId) -> NodeId {
    NodeId::new(format!("ent:{decision}/context"))
}

pub fn agent(agent: &AgentId) -> NodeId {
    NodeId::new(format!("agent:{agent}"))
}
