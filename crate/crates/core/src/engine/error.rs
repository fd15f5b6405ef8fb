use alloc::string::String;

use crate::ids::{DecisionId, ExecId, InstanceId, PhaseId, StakeholderId, TaskId, TokenId, VersionId};

/// Every way a command can fail. Codes are stable and machine-readable.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("unknown meta-model version {0}")]
    UnknownVersion(VersionId),
    #[error("unknown instance {0}")]
    UnknownInstance(InstanceId),
    #[error("unknown phase {0}")]
    UnknownPhase(PhaseId),
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("unknown task execution {0}")]
    UnknownExecution(ExecId),
    #[error("unknown decision {0}")]
    UnknownDecision(DecisionId),
    #[error("unknown token {0}")]
    UnknownToken(TokenId),
    #[error("unknown destination {0}")]
    UnknownDestination(StakeholderId),
    #[error("unknown entity {0}")]
    UnknownEntity(String),
    #[error("task {task} is not ready: {detail}")]
    PrecedenceViolation { task: TaskId, detail: String },
    #[error("phase {phase} cannot begin before {requires} has a completed iteration")]
    PhaseOrderViolation { phase: PhaseId, requires: PhaseId },
    #[error("mandatory task {0} is neither completed nor skipped")]
    MandatoryTaskIncomplete(TaskId),
    #[error("the active phase iteration has no completed or skipped task")]
    EmptyIteration,
    #[error("{0}")]
    WrongState(String),
    #[error("instance is not active")]
    InstanceNotActive,
    #[error("decision {0} is already decided")]
    AlreadyDecided(DecisionId),
    #[error("{choice:?} is not one of the options of decision {decision}")]
    InvalidChoice { decision: DecisionId, choice: String },
    #[error("decision {0} must be resolved by a human agent")]
    HumanDecisionRequired(DecisionId),
    #[error("decisions are pending")]
    PendingDecisions,
    #[error("{0} cannot be the target of a forward transition")]
    InvalidTransitionTarget(PhaseId),
    #[error("phase {0} has never been executed in this instance")]
    PhaseNeverExecuted(PhaseId),
    #[error("task {0} does not allow external consultation")]
    ConsultNotAllowed(TaskId),
    #[error("token {0} has expired")]
    TokenExpired(TokenId),
    #[error("token {0} has already been answered")]
    DuplicateResponse(TokenId),
    #[error("artifact {0} was already produced in this instance")]
    DuplicateArtifact(String),
    #[error("malformed request: {0}")]
    Malformed(String),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownVersion(_) => "unknown-version",
            Self::UnknownInstance(_) => "unknown-instance",
            Self::UnknownPhase(_) => "unknown-phase",
            Self::UnknownTask(_) => "unknown-task",
            Self::UnknownExecution(_) => "unknown-execution",
            Self::UnknownDecision(_) => "unknown-decision",
            Self::UnknownToken(_) => "unknown-token",
            Self::UnknownDestination(_) => "unknown-destination",
            Self::UnknownEntity(_) => "unknown-entity",
            Self::PrecedenceViolation { .. } => "precedence-violation",
            Self::PhaseOrderViolation { .. } => "phase-order-violation",
            Self::MandatoryTaskIncomplete(_) => "mandatory-task-incomplete",
            Self::EmptyIteration => "empty-iteration",
            Self::WrongState(_) => "wrong-state",
            Self::InstanceNotActive => "instance-not-active",
            Self::AlreadyDecided(_) => "already-decided",
            Self::InvalidChoice { .. } => "invalid-choice",
            Self::HumanDecisionRequired(_) => "human-decision-required",
            Self::PendingDecisions => "pending-decisions",
            Self::InvalidTransitionTarget(_) => "invalid-transition-target",
            Self::PhaseNeverExecuted(_) => "phase-never-executed",
            Self::ConsultNotAllowed(_) => "consult-not-allowed",
            Self::TokenExpired(_) => "token-expired",
            Self::DuplicateResponse(_) => "duplicate-response",
            Self::DuplicateArtifact(_) => "duplicate-artifact",
            Self::Malformed(_) => "malformed",
        }
    }

    /// HTTP status class for the service layer.
    pub fn http_status(&self) -> u16 {
        match self {
            Self::UnknownVersion(_)
            | Self::UnknownInstance(_)
            | Self::UnknownPhase(_)
            | Self::UnknownTask(_)
            | Self::UnknownExecution(_)
            | Self::UnknownDecision(_)
            | Self::UnknownToken(_)
            | Self::UnknownDestination(_)
            | Self::UnknownEntity(_) => 404,
            Self::InvalidChoice { .. } | Self::Malformed(_) => 422,
            _ => 409,
        }
    }
}
