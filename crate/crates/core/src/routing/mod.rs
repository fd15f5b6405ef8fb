//! The external connector: stakeholder addresses, correlated request tokens
//! and their wire envelopes, plus a seeded network simulator.

pub mod sim;

use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::ids::{AgentId, ExecId, InstanceId, StakeholderId, TokenId};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StakeholderKind {
    Department,
    Consultee,
    CitizenChannel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StakeholderAddress {
    pub id: StakeholderId,
    pub name: String,
    pub department: String,
    /// Opaque routing key.
    pub endpoint: String,
    pub kind: StakeholderKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RoutingError {
    #[error("stakeholder id {0} is already registered")]
    DuplicateStakeholder(StakeholderId),
    #[error("endpoint {0:?} is already registered")]
    DuplicateEndpoint(String),
    #[error("stakeholder id and endpoint must be non-empty")]
    EmptyAddress,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StakeholderRegistry {
    by_id: BTreeMap<StakeholderId, StakeholderAddress>,
}

impl StakeholderRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, addr: StakeholderAddress) -> Result<(), RoutingError> {
        if addr.id.as_str().is_empty() || addr.endpoint.is_empty() {
            return Err(RoutingError::EmptyAddress);
        }
        if self.by_id.contains_key(&addr.id) {
            return Err(RoutingError::DuplicateStakeholder(addr.id));
        }
        if self.by_id.values().any(|a| a.endpoint == addr.endpoint) {
            return Err(RoutingError::DuplicateEndpoint(addr.endpoint));
        }
        self.by_id.insert(addr.id.clone(), addr);
        Ok(())
    }

    pub fn get(&self, id: &StakeholderId) -> Option<&StakeholderAddress> {
        self.by_id.get(id)
    }

    pub fn resolve_endpoint(&self, endpoint: &str) -> Option<&StakeholderAddress> {
        self.by_id.values().find(|a| a.endpoint == endpoint)
    }

    pub fn iter(&self) -> impl Iterator<Item = &StakeholderAddress> {
        self.by_id.values()
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestDetails {
    pub text: String,
    pub expected_kind: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponsePayload {
    pub kind: String,
    pub content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TokenState {
    Dispatched,
    Responded,
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub token_id: TokenId,
    pub instance_id: InstanceId,
    pub task_exec_id: ExecId,
    pub requested_details: RequestDetails,
    pub destination: StakeholderAddress,
    pub issued_at: Timestamp,
    pub deadline: Timestamp,
    pub state: TokenState,
}

impl Token {
    pub fn envelope(&self) -> TokenEnvelope {
        TokenEnvelope {
            token_id: self.token_id.clone(),
            instance_id: self.instance_id.clone(),
            task_exec_id: self.task_exec_id.clone(),
            destination: self.destination.id.clone(),
            requested_details: self.requested_details.clone(),
            issued_at: self.issued_at,
            deadline: self.deadline,
        }
    }
}

/// Wire form of a dispatched request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenEnvelope {
    pub token_id: TokenId,
    pub instance_id: InstanceId,
    pub task_exec_id: ExecId,
    pub destination: StakeholderId,
    pub requested_details: RequestDetails,
    pub issued_at: Timestamp,
    pub deadline: Timestamp,
}

/// Wire form of a stakeholder's answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseEnvelope {
    pub token_id: TokenId,
    pub responder: AgentId,
    pub payload: ResponsePayload,
    pub responded_at: Timestamp,
}

/// A response the connector refused to route (audit only, no provenance).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedResponse {
    pub envelope: ResponseEnvelope,
    pub code: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    pub(crate) fn addr(id: &str, endpoint: &str) -> StakeholderAddress {
        StakeholderAddress {
            id: id.into(),
            name: id.into(),
            department: "dept".into(),
            endpoint: endpoint.into(),
            kind: StakeholderKind::Consultee,
        }
    }

    #[test]
    fn registry_rejects_duplicates() {
        let mut reg = StakeholderRegistry::new();
        reg.register(addr("transport_dept", "route://transport")).unwrap();
        assert!(reg.get(&"transport_dept".into()).is_some());
        assert_eq!(
            reg.register(addr("other", "route://transport")),
            Err(RoutingError::DuplicateEndpoint("route://transport".into()))
        );
        assert_eq!(
            reg.register(addr("transport_dept", "route://x")),
            Err(RoutingError::DuplicateStakeholder("transport_dept".into()))
        );
        assert_eq!(reg.register(addr("", "route://y")), Err(RoutingError::EmptyAddress));
        assert_eq!(reg.len(), 1);
    }

    #[test]
    fn envelope_wire_shape() {
        let env = TokenEnvelope {
            token_id: "pi-1/t1".into(),
            instance_id: "pi-1".into(),
            task_exec_id: "pi-1/x1".into(),
            destination: "consultee_a".into(),
            requested_details: RequestDetails { text: "analysis".into(), expected_kind: "report".into() },
            issued_at: Timestamp::from_millis(0),
            deadline: Timestamp::from_millis(60_000),
        };
        let v = serde_json::to_value(&env).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            ["deadline", "destination", "instance_id", "issued_at", "requested_details", "task_exec_id", "token_id"]
        );
        assert_eq!(v["deadline"], "1970-01-01T00:01:00.000Z");
        let back: TokenEnvelope = serde_json::from_value(v).unwrap();
        assert_eq!(back, env);

        let bad = serde_json::json!({"token_id": "t", "responder": "r", "payload": {"kind": "k", "content": "c"}, "responded_at": "1970-01-01T00:00:00Z", "extra": 1});
        assert!(serde_json::from_value::<ResponseEnvelope>(bad).is_err());
    }
}
