#![allow(dead_code)]

use pcp_core::engine::{DecisionKind, DecisionPoint, EngineEvent, EventKind};
use pcp_core::metamodel::default_policy_cycle;
use pcp_core::runtime::{CommandResult, Runtime};
use pcp_core::store::ProvStore;
use pcp_core::{AgentId, DecisionId, InstanceId, PhaseId, TaskId, Timestamp};

/// A runtime with the default model, an in-memory store and a clock that
/// advances one second per command.
pub struct Desk {
    pub rt: Runtime<ProvStore>,
    pub clock: u64,
}

impl Desk {
    pub fn new() -> Self {
        let mut rt = Runtime::new(ProvStore::new());
        rt.register_model(default_policy_cycle()).unwrap();
        Self { rt, clock: 0 }
    }

    pub fn tick(&mut self) -> Timestamp {
        self.clock += 1_000;
        Timestamp::from_millis(self.clock)
    }

    pub fn create(&mut self, who: &str) -> InstanceId {
        let at = self.tick();
        let events = self.rt.create_instance(None, &who.into(), at).unwrap();
        events[0].instance_id.clone()
    }

    pub fn start(&mut self, inst: &InstanceId, task: &str) -> CommandResult {
        let at = self.tick();
        self.rt.start_task(inst, &task.into(), &"alice".into(), at)
    }

    pub fn complete(&mut self, inst: &InstanceId, task: &str, outputs: &[&str]) -> CommandResult {
        let at = self.tick();
        let outputs: Vec<String> = outputs.iter().map(|s| s.to_string()).collect();
        self.rt.complete_task_named(inst, &task.into(), &outputs, &[], None, &"alice".into(), at)
    }

    pub fn run(&mut self, inst: &InstanceId, task: &str, outputs: &[&str]) {
        self.start(inst, task).unwrap_or_else(|e| panic!("start {task}: {e}"));
        self.complete(inst, task, outputs).unwrap_or_else(|e| panic!("complete {task}: {e}"));
    }

    pub fn skip(&mut self, inst: &InstanceId, task: &str, decider: &str) -> CommandResult {
        let at = self.tick();
        let raised = self.rt.skip_task(inst, &task.into(), &"alice".into(), "not required", at)?;
        let id = raised_decision(&raised).id;
        self.resolve(&id, "approve", decider)
    }

    pub fn resolve(&mut self, decision: &DecisionId, choice: &str, who: &str) -> CommandResult {
        let at = self.tick();
        self.rt.resolve_decision(decision, choice, &AgentId::new(who), at)
    }

    pub fn transition(&mut self, inst: &InstanceId, target: Option<&str>) -> CommandResult {
        let at = self.tick();
        let target = target.map(PhaseId::new);
        self.rt.request_phase_transition(inst, target.as_ref(), &"alice".into(), at)
    }

    /// Transition then resolve the PhaseEntry decision with `entry`.
    pub fn enter(&mut self, inst: &InstanceId, target: &str, entry: &str) {
        let events = self.transition(inst, Some(target)).unwrap_or_else(|e| panic!("transition to {target}: {e}"));
        let d = raised_decision(&events);
        assert_eq!(d.kind, DecisionKind::PhaseEntry);
        self.resolve(&d.id, entry, "bob").unwrap();
    }

    pub fn loop_back(&mut self, inst: &InstanceId, target: &str) -> CommandResult {
        let at = self.tick();
        self.rt.loop_back(inst, &target.into(), &"carol".into(), "evaluation found gaps", at)
    }

    pub fn pending(&self, inst: &InstanceId) -> Vec<DecisionPoint> {
        self.rt.pending_decisions(inst).unwrap()
    }

    pub fn ready(&self, inst: &InstanceId) -> Vec<TaskId> {
        self.rt.ready_tasks(inst).unwrap()
    }

    pub fn log(&self, inst: &InstanceId) -> Vec<EngineEvent> {
        self.rt.events(inst, 1).unwrap().to_vec()
    }

    /// All five phases with at least one task each; monitoring_evaluation is
    /// left active.
    pub fn full_cycle(&mut self, inst: &InstanceId) {
        self.run(inst, "problem_identification", &["problem_statement"]);
        self.run(inst, "validation", &[]);
        self.run(inst, "plan_setting", &["agenda_plan"]);
        self.enter(inst, "analysis", "challenges_opportunities_identification");
        self.run(inst, "challenges_opportunities_identification", &["swot"]);
        self.run(inst, "solution_determination", &["options_paper"]);
        self.enter(inst, "policy_creation", "formal_consultation");
        self.run(inst, "formal_consultation", &[]);
        self.run(inst, "policy_formulation", &["policy_draft"]);
        self.enter(inst, "implementation", "regulation_development");
        self.run(inst, "regulation_development", &["regulation"]);
        self.enter(inst, "monitoring_evaluation", "monitoring");
        self.run(inst, "monitoring", &["monitoring_report"]);
        self.run(inst, "evaluation", &["evaluation_report"]);
    }
}

pub fn raised_decision(events: &[EngineEvent]) -> DecisionPoint {
    events
        .iter()
        .rev()
        .find_map(|e| match &e.kind {
            EventKind::DecisionRaised { decision } => Some(decision.clone()),
            _ => None,
        })
        .expect("a decision was raised")
}

pub fn names(events: &[EngineEvent]) -> Vec<&'static str> {
    events.iter().map(|e| e.kind.name()).collect()
}

pub fn ids(v: &[&str]) -> Vec<TaskId> {
    v.iter().map(|s| TaskId::new(*s)).collect()
}
