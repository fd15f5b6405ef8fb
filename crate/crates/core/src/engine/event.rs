use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::state::{DecisionPoint, EnteredVia, LastActivity};
use crate::ids::{AgentId, DecisionId, ExecId, InstanceId, NodeId, PhaseId, TaskId, TokenId, VersionId};
use crate::routing::{ResponsePayload, Token};
use crate::time::Timestamp;

/// One immutable entry of an instance's event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineEvent {
    pub seq: u64,
    pub instance_id: InstanceId,
    pub at: Timestamp,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload")]
pub enum EventKind {
    InstanceCreated {
        model_version: VersionId,
        created_by: AgentId,
    },
    PhaseEntered {
        phase_id: PhaseId,
        iteration: u32,
        entered_via: EnteredVia,
        triggering_activity: Option<NodeId>,
        entry_task: Option<TaskId>,
        actor: AgentId,
    },
    PhaseCompleted {
        phase_id: PhaseId,
        iteration: u32,
        last_activity: Option<LastActivity>,
        actor: AgentId,
        /// Set when completing the final phase closes the instance.
        closes_instance: bool,
    },
    TaskStarted {
        exec_id: ExecId,
        task_id: TaskId,
        phase_id: PhaseId,
        iteration: u32,
        actor: AgentId,
    },
    TaskCompleted {
        exec_id: ExecId,
        task_id: TaskId,
        outputs: Vec<NodeId>,
        inputs: Vec<NodeId>,
        comment: Option<String>,
        actor: AgentId,
    },
    TaskSkipped {
        /// Reuses the running execution's id when an awaiting task is abandoned.
        exec_id: ExecId,
        task_id: TaskId,
        phase_id: PhaseId,
        iteration: u32,
        reason: String,
        actor: AgentId,
        decision_id: DecisionId,
    },
    AwaitingExternal {
        exec_id: ExecId,
        token: Token,
        actor: AgentId,
    },
    ExternalReceived {
        exec_id: ExecId,
        token_id: TokenId,
        responder: AgentId,
        payload: ResponsePayload,
        entity_id: NodeId,
    },
    DecisionRaised {
        decision: DecisionPoint,
    },
    DecisionResolved {
        decision_id: DecisionId,
        choice: String,
        decided_by: AgentId,
    },
    LoopBack {
        target_phase: PhaseId,
        from_phase: Option<PhaseId>,
        iteration: u32,
        triggering_activity: NodeId,
        reason: String,
        actor: AgentId,
        decision_id: DecisionId,
    },
    CommandRejected {
        command: String,
        code: String,
        message: String,
        actor: AgentId,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::InstanceCreated { .. } => "InstanceCreated",
            Self::PhaseEntered { .. } => "PhaseEntered",
            Self::PhaseCompleted { .. } => "PhaseCompleted",
            Self::TaskStarted { .. } => "TaskStarted",
            Self::TaskCompleted { .. } => "TaskCompleted",
            Self::TaskSkipped { .. } => "TaskSkipped",
            Self::AwaitingExternal { .. } => "AwaitingExternal",
            Self::ExternalReceived { .. } => "ExternalReceived",
            Self::DecisionRaised { .. } => "DecisionRaised",
            Self::DecisionResolved { .. } => "DecisionResolved",
            Self::LoopBack { .. } => "LoopBack",
            Self::CommandRejected { .. } => "CommandRejected",
        }
    }
}
