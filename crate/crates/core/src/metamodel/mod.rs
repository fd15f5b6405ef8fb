//! Declarative description of the policy cycle: per-phase meta-models wrapped
//! in a versioned, self-describing meta-meta-model.

mod condition;
mod default_cycle;
mod document;
mod registry;
mod schema;
mod validate;

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

pub use condition::{
    evaluate_condition, parse_condition, Atom, ConditionExpr, ConditionState, ConditionSyntaxError, TaskRef,
    UnknownIdentifier,
};
pub use default_cycle::{default_policy_cycle, DEFAULT_VERSION};
pub use document::{parse_meta_meta_model, to_document, to_json, to_json_pretty};
pub use registry::{MetaModelRegistry, RegistryError};
pub use schema::{canonical_schema, validate_against_schema};
pub use validate::{validate_model, validate_phase_meta_model, ValidationReport, Violation};

use crate::ids::{PhaseId, TaskId, VersionId};

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDef {
    pub id: TaskId,
    pub name: String,
    /// Checklist labels; not independently scheduled.
    pub subtasks: Vec<String>,
    pub mandatory: bool,
    /// Tasks of the same phase that must be Completed or Skipped first.
    pub precedence: BTreeSet<TaskId>,
    pub external_consult_allowed: bool,
    pub precondition: Option<ConditionExpr>,
}

impl TaskDef {
    pub fn new(id: impl Into<TaskId>, name: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            subtasks: Vec::new(),
            mandatory: false,
            precedence: BTreeSet::new(),
            external_consult_allowed: false,
            precondition: None,
        }
    }

    pub fn after<I, T>(mut self, tasks: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: Into<TaskId>,
    {
        self.precedence.extend(tasks.into_iter().map(Into::into));
        self
    }

    pub fn with_subtasks<I, S>(mut self, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.subtasks.extend(labels.into_iter().map(Into::into));
        self
    }

    pub fn mandatory(mut self, mandatory: bool) -> Self {
        self.mandatory = mandatory;
        self
    }

    pub fn consultable(mut self, allowed: bool) -> Self {
        self.external_consult_allowed = allowed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMetaModel {
    pub id: PhaseId,
    pub name: String,
    pub ordinal: i64,
    pub tasks: Vec<TaskDef>,
    pub entry_decision_required: bool,
}

impl PhaseMetaModel {
    pub fn task(&self, id: &TaskId) -> Option<&TaskDef> {
        self.tasks.iter().find(|t| &t.id == id)
    }

    /// Precedence-free tasks in declaration order.
    pub fn entry_tasks(&self) -> Vec<TaskId> {
        self.tasks.iter().filter(|t| t.precedence.is_empty()).map(|t| t.id.clone()).collect()
    }
}

/// `subject` may not begin a first (non loop-back) iteration until
/// `requires` has at least one completed iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseOrderConstraint {
    pub subject: PhaseId,
    pub requires: PhaseId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaMetaModel {
    pub version: VersionId,
    pub phases: Vec<PhaseMetaModel>,
    pub phase_constraints: Vec<PhaseOrderConstraint>,
    /// Description of the document format this model was read from.
    pub schema: serde_json::Value,
}

impl MetaMetaModel {
    pub fn phase(&self, id: &PhaseId) -> Option<&PhaseMetaModel> {
        self.phases.iter().find(|p| &p.id == id)
    }

    pub fn task(&self, phase: &PhaseId, task: &TaskId) -> Option<&TaskDef> {
        self.phase(phase)?.task(task)
    }

    /// Phases sorted by ordinal.
    pub fn phases_in_cycle_order(&self) -> Vec<&PhaseMetaModel> {
        let mut phases: Vec<_> = self.phases.iter().collect();
        phases.sort_by_key(|p| p.ordinal);
        phases
    }

    pub fn first_phase(&self) -> Option<&PhaseMetaModel> {
        self.phases.iter().min_by_key(|p| p.ordinal)
    }

    pub fn last_phase(&self) -> Option<&PhaseMetaModel> {
        self.phases.iter().max_by_key(|p| p.ordinal)
    }

    /// The phase with the next higher ordinal, if any.
    pub fn next_phase(&self, id: &PhaseId) -> Option<&PhaseMetaModel> {
        let ordinal = self.phase(id)?.ordinal;
        self.phases.iter().filter(|p| p.ordinal > ordinal).min_by_key(|p| p.ordinal)
    }

    pub fn constraints_on(&self, subject: &PhaseId) -> impl Iterator<Item = &PhaseOrderConstraint> {
        let subject = subject.clone();
        self.phase_constraints.iter().filter(move |c| c.subject == subject)
    }

    /// Resolves a condition task reference relative to `owner`.
    pub fn resolve_task_ref(&self, owner: Option<&PhaseId>, r: &TaskRef) -> Option<(PhaseId, TaskId)> {
        if let Some(p) = &r.phase {
            return self.task(p, &r.task).map(|t| (p.clone(), t.id.clone()));
        }
        if let Some(owner) = owner {
            if self.task(owner, &r.task).is_some() {
                return Some((owner.clone(), r.task.clone()));
            }
        }
        let mut hits = self.phases.iter().filter(|p| p.task(&r.task).is_some());
        match (hits.next(), hits.next()) {
            (Some(p), None) => Some((p.id.clone(), r.task.clone())),
            _ => None,
        }
    }
}
