use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::ids::{AgentId, DecisionId, ExecId, InstanceId, NodeId, PhaseId, TaskId, TokenId, VersionId};
use crate::routing::Token;
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstanceStatus {
    Active,
    Completed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnteredVia {
    Initial,
    Transition,
    LoopBack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseState {
    Active,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseExecution {
    pub phase_id: PhaseId,
    pub iteration: u32,
    pub state: PhaseState,
    pub entered_via: EnteredVia,
    pub triggering_activity: Option<NodeId>,
    /// Task chosen at the connector when the phase was entered.
    pub entry_task: Option<TaskId>,
    pub entered_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskState {
    Ready,
    InProgress,
    AwaitingExternal,
    Completed,
    Skipped,
}

impl TaskState {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Completed | Self::Skipped)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskExecution {
    pub exec_id: ExecId,
    pub task_id: TaskId,
    pub phase_id: PhaseId,
    pub iteration: u32,
    pub state: TaskState,
    pub actor: AgentId,
    pub inputs: Vec<NodeId>,
    pub outputs: Vec<NodeId>,
    pub comments: Vec<String>,
    pub started_at: Timestamp,
    pub ended_at: Option<Timestamp>,
    /// Seq of the event that made the execution terminal.
    pub terminal_seq: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LastActivity {
    pub exec_id: ExecId,
    pub task_id: TaskId,
    pub summary: String,
    pub at: Timestamp,
}

/// Per-phase decision node holding the phase's most recent terminal activity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Connector {
    pub phase_id: PhaseId,
    pub last_activity: Option<LastActivity>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DecisionKind {
    NextTask,
    PhaseEntry,
    LoopBackTarget,
    TokenExpiry,
    SkipApproval,
}

pub const APPROVE: &str = "approve";
pub const REJECT: &str = "reject";
pub const REDISPATCH: &str = "redispatch";
pub const SKIP_CONSULTATION: &str = "skip_consultation";
pub const ABANDON_TASK: &str = "abandon_task";

/// What a decision is about; fields not relevant to its kind are `None`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionContext {
    pub requested_by: Option<AgentId>,
    pub phase_id: Option<PhaseId>,
    pub task_id: Option<TaskId>,
    pub exec_id: Option<ExecId>,
    pub token_id: Option<TokenId>,
    pub reason: Option<String>,
    pub last_activity: Option<LastActivity>,
    pub triggering_activity: Option<NodeId>,
    /// Phase completed by the loop-back request.
    pub source_phase: Option<PhaseId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionPoint {
    pub id: DecisionId,
    pub instance_id: InstanceId,
    pub kind: DecisionKind,
    pub options: Vec<String>,
    pub chosen: Option<String>,
    pub decided_by: Option<AgentId>,
    pub raised_at: Timestamp,
    pub decided_at: Option<Timestamp>,
    pub context: DecisionContext,
}

impl DecisionPoint {
    pub fn is_pending(&self) -> bool {
        self.chosen.is_none()
    }
}

/// Runtime state of one policy instance. Only `apply` mutates it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyInstance {
    pub id: InstanceId,
    pub model_version: VersionId,
    pub status: InstanceStatus,
    pub created_by: AgentId,
    pub created_at: Timestamp,
    pub phase_executions: Vec<PhaseExecution>,
    pub task_executions: BTreeMap<ExecId, TaskExecution>,
    pub connectors: BTreeMap<PhaseId, Connector>,
    pub decisions: BTreeMap<DecisionId, DecisionPoint>,
    pub tokens: BTreeMap<TokenId, Token>,
    /// Entity node ids known to this instance (outputs and token payloads).
    pub entities: BTreeSet<NodeId>,
    pub last_seq: u64,
    pub last_at: Timestamp,
    pub(crate) counters: Counters,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct Counters {
    pub exec: u64,
    pub decision: u64,
    pub token: u64,
}

impl PolicyInstance {
    pub fn active_phase(&self) -> Option<&PhaseExecution> {
        self.phase_executions.iter().rev().find(|p| p.state == PhaseState::Active)
    }

    pub fn pending_decisions(&self) -> impl Iterator<Item = &DecisionPoint> {
        self.decisions.values().filter(|d| d.is_pending())
    }

    pub fn iterations_of(&self, phase: &PhaseId) -> impl Iterator<Item = &PhaseExecution> {
        let phase = phase.clone();
        self.phase_executions.iter().filter(move |p| p.phase_id == phase)
    }

    pub fn latest_iteration(&self, phase: &PhaseId) -> Option<&PhaseExecution> {
        self.iterations_of(phase).last()
    }

    pub fn completed_iterations(&self, phase: &PhaseId) -> usize {
        self.iterations_of(phase).filter(|p| p.state == PhaseState::Completed).count()
    }

    /// Executions belonging to one iteration of a phase.
    pub fn executions_in(&self, phase: &PhaseId, iteration: u32) -> impl Iterator<Item = &TaskExecution> {
        let phase = phase.clone();
        self.task_executions.values().filter(move |e| e.phase_id == phase && e.iteration == iteration)
    }

    pub fn execution(&self, exec: &ExecId) -> Option<&TaskExecution> {
        self.task_executions.get(exec)
    }

    pub fn connector(&self, phase: &PhaseId) -> Option<&Connector> {
        self.connectors.get(phase)
    }

    /// The token currently Dispatched for an execution, if any.
    pub fn outstanding_token_for(&self, exec: &ExecId) -> Option<&Token> {
        self.tokens.values().find(|t| &t.task_exec_id == exec && t.state == crate::routing::TokenState::Dispatched)
    }

    pub fn has_pending_skip(&self, phase: &PhaseId, iteration: u32, task: &TaskId) -> bool {
        self.pending_decisions().any(|d| {
            d.kind == DecisionKind::SkipApproval
                && d.context.task_id.as_ref() == Some(task)
                && d.context.phase_id.as_ref() == Some(phase)
                && self.active_phase().is_some_and(|p| p.iteration == iteration)
        })
    }

    /// Canonical snapshot: JSON with lexicographically sorted keys.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("instance state always serialises");
        serde_json::to_string(&value).expect("values always serialise")
    }
}
