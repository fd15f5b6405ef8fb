use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::Serialize;

use super::{Atom, MetaMetaModel, PhaseMetaModel};
use crate::ids::{PhaseId, TaskId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "code", rename_all = "kebab-case")]
pub enum Violation {
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    /// The document does not have the shape the decoder needs.
    Structure {
        path: String,
        message: String,
    },
    /// The document does not satisfy its own embedded schema.
    SchemaMismatch {
        path: String,
        message: String,
    },
    InvalidVersion {
        version: String,
    },
    EmptyPhases,
    EmptyPhase {
        phase: PhaseId,
    },
    EmptyId {
        path: String,
    },
    InvalidId {
        path: String,
        id: String,
    },
    DuplicatePhaseId {
        phase: PhaseId,
    },
    DuplicateOrdinal {
        ordinal: i64,
    },
    DuplicateTaskId {
        phase: PhaseId,
        task: TaskId,
    },
    DanglingPrecedence {
        phase: PhaseId,
        task: TaskId,
        missing: TaskId,
    },
    PrecedenceCycle {
        phase: PhaseId,
        tasks: BTreeSet<TaskId>,
    },
    NoEntryPoint {
        phase: PhaseId,
    },
    SelfPhaseConstraint {
        phase: PhaseId,
    },
    DanglingPhaseConstraint {
        subject: PhaseId,
        requires: PhaseId,
        missing: PhaseId,
    },
    PhaseConstraintCycle {
        phases: BTreeSet<PhaseId>,
    },
    InvalidCondition {
        phase: PhaseId,
        task: TaskId,
        message: String,
    },
}

impl Violation {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Syntax { .. } => "syntax",
            Self::Structure { .. } => "structure",
            Self::SchemaMismatch { .. } => "schema-mismatch",
            Self::InvalidVersion { .. } => "invalid-version",
            Self::EmptyPhases => "empty-phases",
            Self::EmptyPhase { .. } => "empty-phase",
            Self::EmptyId { .. } => "empty-id",
            Self::InvalidId { .. } => "invalid-id",
            Self::DuplicatePhaseId { .. } => "duplicate-phase-id",
            Self::DuplicateOrdinal { .. } => "duplicate-ordinal",
            Self::DuplicateTaskId { .. } => "duplicate-task-id",
            Self::DanglingPrecedence { .. } => "dangling-precedence",
            Self::PrecedenceCycle { .. } => "precedence-cycle",
            Self::NoEntryPoint { .. } => "no-entry-point",
            Self::SelfPhaseConstraint { .. } => "self-phase-constraint",
            Self::DanglingPhaseConstraint { .. } => "dangling-phase-constraint",
            Self::PhaseConstraintCycle { .. } => "phase-constraint-cycle",
            Self::InvalidCondition { .. } => "invalid-condition",
        }
    }
}

fn join<T: fmt::Display>(items: &BTreeSet<T>) -> String {
    let mut out = String::new();
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&alloc::format!("{item}"));
    }
    out
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] ", self.code())?;
        match self {
            Self::Syntax { line, column, message } => write!(f, "line {line}, column {column}: {message}"),
            Self::Structure { path, message } | Self::SchemaMismatch { path, message } => {
                write!(f, "{path}: {message}")
            }
            Self::InvalidVersion { version } => write!(f, "{version:?} is not MAJOR.MINOR.PATCH"),
            Self::EmptyPhases => write!(f, "model declares no phases"),
            Self::EmptyPhase { phase } => write!(f, "phase {phase} has no tasks"),
            Self::EmptyId { path } => write!(f, "{path}: identifier is empty"),
            Self::InvalidId { path, id } => write!(f, "{path}: {id:?} may only contain [A-Za-z0-9_-]"),
            Self::DuplicatePhaseId { phase } => write!(f, "phase id {phase} declared more than once"),
            Self::DuplicateOrdinal { ordinal } => write!(f, "ordinal {ordinal} used by more than one phase"),
            Self::DuplicateTaskId { phase, task } => write!(f, "task id {task} declared more than once in {phase}"),
            Self::DanglingPrecedence { phase, task, missing } => {
                write!(f, "{phase}/{task} requires {missing}, which is not a task of {phase}")
            }
            Self::PrecedenceCycle { phase, tasks } => write!(f, "precedence cycle in {phase}: {{{}}}", join(tasks)),
            Self::NoEntryPoint { phase } => write!(f, "every task of {phase} has a precedence set"),
            Self::SelfPhaseConstraint { phase } => write!(f, "phase {phase} constrained on itself"),
            Self::DanglingPhaseConstraint { subject, requires, missing } => {
                write!(f, "constraint {subject} requires {requires} names unknown phase {missing}")
            }
            Self::PhaseConstraintCycle { phases } => write!(f, "phase constraint cycle: {{{}}}", join(phases)),
            Self::InvalidCondition { phase, task, message } => write!(f, "{phase}/{task} precondition: {message}"),
        }
    }
}

/// Every violation found in a document or model; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, v: Violation) {
        self.violations.push(v);
    }

    pub fn extend(&mut self, other: ValidationReport) {
        self.violations.extend(other.violations);
    }

    pub fn codes(&self) -> Vec<&'static str> {
        self.violations.iter().map(Violation::code).collect()
    }

    pub fn contains(&self, code: &str) -> bool {
        self.violations.iter().any(|v| v.code() == code)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

pub(crate) fn check_id(path: &str, id: &str, report: &mut ValidationReport) {
    if id.is_empty() {
        report.push(Violation::EmptyId { path: path.into() });
    } else if !id.bytes().all(|c| c.is_ascii_alphanumeric() || c == b'_' || c == b'-') {
        report.push(Violation::InvalidId { path: path.into(), id: id.into() });
    }
}

fn valid_semver(v: &str) -> bool {
    let parts: Vec<&str> = v.split('.').collect();
    parts.len() == 3
        && parts
            .iter()
            .all(|p| !p.is_empty() && p.bytes().all(|c| c.is_ascii_digit()) && (p.len() == 1 || !p.starts_with('0')))
}

/// Strongly connected components that contain a cycle (size > 1, or a
/// self-loop), via Tarjan's algorithm.
pub(crate) fn cyclic_components<K: Ord + Clone>(edges: &BTreeMap<K, Vec<K>>) -> Vec<BTreeSet<K>> {
    struct Tarjan<'a, K: Ord> {
        edges: &'a BTreeMap<K, Vec<K>>,
        index: BTreeMap<&'a K, usize>,
        low: BTreeMap<&'a K, usize>,
        stack: Vec<&'a K>,
        on_stack: BTreeSet<&'a K>,
        next: usize,
        out: Vec<BTreeSet<K>>,
    }

    impl<'a, K: Ord + Clone> Tarjan<'a, K> {
        fn visit(&mut self, v: &'a K) {
            self.index.insert(v, self.next);
            self.low.insert(v, self.next);
            self.next += 1;
            self.stack.push(v);
            self.on_stack.insert(v);
            let edges = self.edges;
            for w in edges.get(v).into_iter().flatten() {
                // Dangling targets are reported elsewhere.
                let Some((w, _)) = edges.get_key_value(w) else { continue };
                if !self.index.contains_key(w) {
                    self.visit(w);
                    let lw = self.low[w];
                    let lv = self.low.get_mut(v).unwrap();
                    *lv = (*lv).min(lw);
                } else if self.on_stack.contains(w) {
                    let iw = self.index[w];
                    let lv = self.low.get_mut(v).unwrap();
                    *lv = (*lv).min(iw);
                }
            }
            if self.low[v] == self.index[v] {
                let mut component = BTreeSet::new();
                loop {
                    let w = self.stack.pop().unwrap();
                    self.on_stack.remove(w);
                    component.insert(w.clone());
                    if w == v {
                        break;
                    }
                }
                let self_loop = edges.get(v).is_some_and(|ws| ws.contains(v));
                if component.len() > 1 || self_loop {
                    self.out.push(component);
                }
            }
        }
    }

    let mut t = Tarjan {
        edges,
        index: BTreeMap::new(),
        low: BTreeMap::new(),
        stack: Vec::new(),
        on_stack: BTreeSet::new(),
        next: 0,
        out: Vec::new(),
    };
    for v in edges.keys() {
        if !t.index.contains_key(v) {
            t.visit(v);
        }
    }
    t.out.sort();
    t.out
}

/// Checks every [`PhaseMetaModel`] invariant.
pub fn validate_phase_meta_model(pmm: &PhaseMetaModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    let phase = &pmm.id;
    check_id("phase.id", phase.as_str(), &mut report);
    if pmm.tasks.is_empty() {
        report.push(Violation::EmptyPhase { phase: phase.clone() });
        return report;
    }

    let mut seen = BTreeSet::new();
    for t in &pmm.tasks {
        check_id(&alloc::format!("{phase}.tasks.id"), t.id.as_str(), &mut report);
        if !seen.insert(&t.id) {
            report.push(Violation::DuplicateTaskId { phase: phase.clone(), task: t.id.clone() });
        }
    }
    for t in &pmm.tasks {
        for dep in &t.precedence {
            if !seen.contains(dep) {
                report.push(Violation::DanglingPrecedence {
                    phase: phase.clone(),
                    task: t.id.clone(),
                    missing: dep.clone(),
                });
            }
        }
    }

    let mut edges: BTreeMap<TaskId, Vec<TaskId>> = BTreeMap::new();
    for t in &pmm.tasks {
        edges.entry(t.id.clone()).or_default().extend(t.precedence.iter().cloned());
    }
    for tasks in cyclic_components(&edges) {
        report.push(Violation::PrecedenceCycle { phase: phase.clone(), tasks });
    }

    if pmm.tasks.iter().all(|t| !t.precedence.is_empty()) {
        report.push(Violation::NoEntryPoint { phase: phase.clone() });
    }
    report
}

/// Checks every semantic [`MetaMetaModel`] invariant, including that the
/// model's own document satisfies its embedded schema.
pub fn validate_model(model: &MetaMetaModel) -> ValidationReport {
    let mut report = semantic_checks(model);
    report.extend(super::schema::validate_against_schema(&super::to_document(model), &model.schema));
    report
}

pub(crate) fn semantic_checks(model: &MetaMetaModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    if !valid_semver(model.version.as_str()) {
        report.push(Violation::InvalidVersion { version: model.version.as_str().into() });
    }
    if model.phases.is_empty() {
        report.push(Violation::EmptyPhases);
    }

    let mut ids = BTreeSet::new();
    let mut ordinals = BTreeSet::new();
    for p in &model.phases {
        if !ids.insert(&p.id) {
            report.push(Violation::DuplicatePhaseId { phase: p.id.clone() });
        }
        if !ordinals.insert(p.ordinal) {
            report.push(Violation::DuplicateOrdinal { ordinal: p.ordinal });
        }
        report.extend(validate_phase_meta_model(p));
    }

    let mut edges: BTreeMap<PhaseId, Vec<PhaseId>> = model.phases.iter().map(|p| (p.id.clone(), vec![])).collect();
    for c in &model.phase_constraints {
        if c.subject == c.requires {
            report.push(Violation::SelfPhaseConstraint { phase: c.subject.clone() });
            continue;
        }
        let mut dangling = false;
        for end in [&c.subject, &c.requires] {
            if !ids.contains(end) {
                dangling = true;
                report.push(Violation::DanglingPhaseConstraint {
                    subject: c.subject.clone(),
                    requires: c.requires.clone(),
                    missing: end.clone(),
                });
            }
        }
        if !dangling {
            edges.get_mut(&c.subject).unwrap().push(c.requires.clone());
        }
    }
    for phases in cyclic_components(&edges) {
        report.push(Violation::PhaseConstraintCycle { phases });
    }

    for p in &model.phases {
        for t in &p.tasks {
            let Some(cond) = &t.precondition else { continue };
            cond.for_each_atom(&mut |atom| {
                let problem = match atom {
                    Atom::Completed(r) | Atom::Responded(r) => model
                        .resolve_task_ref(Some(&p.id), r)
                        .is_none()
                        .then(|| alloc::format!("unknown or ambiguous task {r}")),
                    Atom::PhaseCompleted(ph) => (!ids.contains(ph)).then(|| alloc::format!("unknown phase {ph}")),
                };
                if let Some(message) = problem {
                    report.push(Violation::InvalidCondition { phase: p.id.clone(), task: t.id.clone(), message });
                }
            });
        }
    }
    report
}
