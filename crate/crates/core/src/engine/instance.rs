//! Command handling and event application for a single policy instance.
//!
//! Every command validates completely before its first event is emitted, so a
//! rejected command leaves the domain state untouched and appends exactly one
//! `CommandRejected` event.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::error::EngineError;
use super::event::{EngineEvent, EventKind};
use super::state::*;
use crate::ids::{AgentId, DecisionId, ExecId, InstanceId, NodeId, PhaseId, StakeholderId, TaskId, TokenId};
use crate::metamodel::{evaluate_condition, ConditionState, MetaMetaModel, PhaseMetaModel, TaskRef};
use crate::prov::node_ids;
use crate::routing::{RequestDetails, ResponsePayload, StakeholderRegistry, Token, TokenState};
use crate::time::Timestamp;

/// Observer called after each event is applied, with the state as of that
/// event's seq.
pub type EventHook<'a> = &'a mut dyn FnMut(&EngineEvent, &PolicyInstance);

/// A refused command: the domain error plus the `CommandRejected` event that
/// recorded it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejected {
    pub error: EngineError,
    pub event: Box<EngineEvent>,
}

pub type Outcome = Result<Vec<EngineEvent>, Rejected>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("event log is inconsistent at seq {seq}: {reason}")]
pub struct ReplayError {
    pub seq: u64,
    pub reason: String,
}

/// One policy instance: its pinned model, current state and event log.
#[derive(Debug, Clone)]
pub struct InstanceRuntime {
    model: Arc<MetaMetaModel>,
    state: PolicyInstance,
    log: Vec<EngineEvent>,
}

struct Emitter<'r, 'h> {
    rt: &'r mut InstanceRuntime,
    at: Timestamp,
    events: Vec<EngineEvent>,
    hook: EventHook<'h>,
}

impl Emitter<'_, '_> {
    fn state(&self) -> &PolicyInstance {
        &self.rt.state
    }

    fn model(&self) -> &MetaMetaModel {
        &self.rt.model
    }

    fn emit(&mut self, kind: EventKind) -> EngineEvent {
        let event =
            EngineEvent { seq: self.rt.state.last_seq + 1, instance_id: self.rt.state.id.clone(), at: self.at, kind };
        apply(&mut self.rt.state, &self.rt.model, &event).expect("emitted events always apply");
        self.rt.log.push(event.clone());
        (self.hook)(&event, &self.rt.state);
        self.events.push(event.clone());
        event
    }
}

fn require_actor(actor: &AgentId) -> Result<(), EngineError> {
    if actor.as_str().trim().is_empty() {
        Err(EngineError::Malformed("agent id must be non-empty".into()))
    } else {
        Ok(())
    }
}

fn valid_artifact_name(name: &str) -> bool {
    !name.is_empty() && name.bytes().all(|c| c.is_ascii_alphanumeric() || matches!(c, b'_' | b'-' | b'.'))
}

impl InstanceRuntime {
    /// Creates an instance and enters the lowest-ordinal phase.
    pub fn create(
        id: InstanceId,
        model: Arc<MetaMetaModel>,
        initiator: AgentId,
        at: Timestamp,
        hook: EventHook<'_>,
    ) -> Result<(Self, Vec<EngineEvent>), EngineError> {
        require_actor(&initiator)?;
        let first = model.first_phase().ok_or_else(|| EngineError::Malformed("model has no phases".into()))?.id.clone();
        let created = EngineEvent {
            seq: 1,
            instance_id: id.clone(),
            at,
            kind: EventKind::InstanceCreated { model_version: model.version.clone(), created_by: initiator.clone() },
        };
        let state = initial_state(&model, &created).expect("creation event is well formed");
        let mut rt = Self { model, state, log: vec![created.clone()] };
        hook(&created, &rt.state);
        let mut em = Emitter { rt: &mut rt, at, events: vec![created], hook };
        em.emit(EventKind::PhaseEntered {
            phase_id: first,
            iteration: 1,
            entered_via: EnteredVia::Initial,
            triggering_activity: Some(node_ids::event_activity(&id, 1)),
            entry_task: None,
            actor: initiator,
        });
        let events = em.events;
        Ok((rt, events))
    }

    /// Rebuilds an instance from its log.
    pub fn replay(
        model: Arc<MetaMetaModel>,
        events: impl IntoIterator<Item = EngineEvent>,
    ) -> Result<Self, ReplayError> {
        Self::replay_with(model, events, &mut |_, _| {})
    }

    /// Like [`replay`](Self::replay), calling `hook` after every event.
    pub fn replay_with(
        model: Arc<MetaMetaModel>,
        events: impl IntoIterator<Item = EngineEvent>,
        hook: EventHook<'_>,
    ) -> Result<Self, ReplayError> {
        let mut events = events.into_iter();
        let first = events.next().ok_or(ReplayError { seq: 0, reason: "empty log".into() })?;
        let state = initial_state(&model, &first)?;
        let mut rt = Self { model, state, log: vec![first.clone()] };
        hook(&first, &rt.state);
        for event in events {
            if event.seq != rt.state.last_seq + 1 || event.instance_id != rt.state.id {
                return Err(ReplayError { seq: event.seq, reason: "sequence gap or foreign instance".into() });
            }
            apply(&mut rt.state, &rt.model, &event)?;
            hook(&event, &rt.state);
            rt.log.push(event);
        }
        Ok(rt)
    }

    pub fn state(&self) -> &PolicyInstance {
        &self.state
    }

    pub fn model(&self) -> &Arc<MetaMetaModel> {
        &self.model
    }

    pub fn log(&self) -> &[EngineEvent] {
        &self.log
    }

    pub fn events_from(&self, from_seq: u64) -> &[EngineEvent] {
        let start = (from_seq.max(1) - 1).min(self.log.len() as u64) as usize;
        &self.log[start..]
    }

    pub fn ready_tasks(&self) -> BTreeSet<TaskId> {
        ready_tasks(&self.state, &self.model)
    }

    /// The non-terminal execution of `task` in the active iteration.
    pub fn current_execution(&self, task: &TaskId) -> Option<&TaskExecution> {
        let active = self.state.active_phase()?;
        self.state
            .executions_in(&active.phase_id, active.iteration)
            .find(|e| &e.task_id == task && !e.state.is_terminal())
    }

    /// Records a command refused before it reached a typed handler (for
    /// instance, one whose target could not be resolved).
    pub fn reject(
        &mut self,
        command: &str,
        actor: &AgentId,
        error: EngineError,
        at: Timestamp,
        hook: EventHook<'_>,
    ) -> Rejected {
        match self.run(command, actor, at, hook, |_| Err(error)) {
            Err(r) => r,
            Ok(_) => unreachable!("the body always fails"),
        }
    }

    fn run(
        &mut self,
        command: &str,
        actor: &AgentId,
        at: Timestamp,
        hook: EventHook<'_>,
        body: impl FnOnce(&mut Emitter<'_, '_>) -> Result<(), EngineError>,
    ) -> Outcome {
        let at = at.max(self.state.last_at);
        let mut em = Emitter { rt: self, at, events: Vec::new(), hook };
        match body(&mut em) {
            Ok(()) => Ok(em.events),
            Err(error) => {
                debug_assert!(em.events.is_empty(), "{command} emitted before failing");
                let event = em.emit(EventKind::CommandRejected {
                    command: command.into(),
                    code: error.code().into(),
                    message: error.to_string(),
                    actor: actor.clone(),
                });
                Err(Rejected { error, event: Box::new(event) })
            }
        }
    }

    pub fn start_task(&mut self, task: &TaskId, actor: &AgentId, at: Timestamp, hook: EventHook<'_>) -> Outcome {
        self.run("start_task", actor, at, hook, |em| {
            require_actor(actor)?;
            let (phase, iteration) = active_phase_checked(em.state())?;
            check_startable(em.state(), em.model(), &phase, iteration, task)?;
            let exec_id = next_exec_id(em.state());
            em.emit(EventKind::TaskStarted {
                exec_id,
                task_id: task.clone(),
                phase_id: phase,
                iteration,
                actor: actor.clone(),
            });
            Ok(())
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn complete_task(
        &mut self,
        exec: &ExecId,
        outputs: &[String],
        inputs: &[NodeId],
        comment: Option<String>,
        actor: &AgentId,
        at: Timestamp,
        hook: EventHook<'_>,
    ) -> Outcome {
        self.run("complete_task", actor, at, hook, |em| {
            require_actor(actor)?;
            require_active(em.state())?;
            let state = em.state();
            let ex = state.execution(exec).ok_or_else(|| EngineError::UnknownExecution(exec.clone()))?;
            match ex.state {
                TaskState::InProgress => {}
                TaskState::AwaitingExternal => {
                    return Err(EngineError::WrongState(format!("{exec} is awaiting an external response")))
                }
                s => return Err(EngineError::WrongState(format!("{exec} is {s:?}"))),
            }
            let mut output_ids = Vec::with_capacity(outputs.len());
            for name in outputs {
                if !valid_artifact_name(name) {
                    return Err(EngineError::Malformed(format!(
                        "artifact id {name:?} may only contain [A-Za-z0-9_.-]"
                    )));
                }
                let node = node_ids::artifact(&state.id, name);
                if state.entities.contains(&node) || output_ids.contains(&node) {
                    return Err(EngineError::DuplicateArtifact(name.clone()));
                }
                output_ids.push(node);
            }
            for input in inputs {
                if !state.entities.contains(input) {
                    return Err(EngineError::UnknownEntity(input.to_string()));
                }
            }
            let task_id = ex.task_id.clone();
            em.emit(EventKind::TaskCompleted {
                exec_id: exec.clone(),
                task_id,
                outputs: output_ids,
                inputs: inputs.to_vec(),
                comment,
                actor: actor.clone(),
            });
            Ok(())
        })
    }

    /// Raises a SkipApproval decision for a ready task.
    pub fn request_skip(
        &mut self,
        task: &TaskId,
        actor: &AgentId,
        reason: &str,
        at: Timestamp,
        hook: EventHook<'_>,
    ) -> Outcome {
        self.run("skip_task", actor, at, hook, |em| {
            require_actor(actor)?;
            if reason.trim().is_empty() {
                return Err(EngineError::Malformed("a skip needs a reason".into()));
            }
            let (phase, iteration) = active_phase_checked(em.state())?;
            check_startable(em.state(), em.model(), &phase, iteration, task)?;
            let decision = new_decision(
                em.state(),
                DecisionKind::SkipApproval,
                vec![APPROVE.into(), REJECT.into()],
                em.at,
                DecisionContext {
                    requested_by: Some(actor.clone()),
                    phase_id: Some(phase),
                    task_id: Some(task.clone()),
                    reason: Some(reason.into()),
                    ..Default::default()
                },
            );
            em.emit(EventKind::DecisionRaised { decision });
            Ok(())
        })
    }

    /// Completes the active phase and raises a PhaseEntry decision at the
    /// target's connector. With no target, the next phase by ordinal is used;
    /// from the final phase the instance is closed instead.
    pub fn request_phase_transition(
        &mut self,
        target: Option<&PhaseId>,
        actor: &AgentId,
        at: Timestamp,
        hook: EventHook<'_>,
    ) -> Outcome {
        self.run("request_phase_transition", actor, at, hook, |em| {
            require_actor(actor)?;
            let (phase, iteration) = active_phase_checked(em.state())?;
            let model = em.model();
            let current = model.phase(&phase).expect("active phase is in the model");
            let target_phase: Option<&PhaseMetaModel> = match target {
                Some(t) => {
                    let tp = model.phase(t).ok_or_else(|| EngineError::UnknownPhase(t.clone()))?;
                    if tp.ordinal <= current.ordinal {
                        return Err(EngineError::InvalidTransitionTarget(t.clone()));
                    }
                    Some(tp)
                }
                None => model.next_phase(&phase),
            };
            let completion = completion_check(em.state(), model, &phase, iteration);
            if let Some(tp) = target_phase {
                check_phase_order(em.state(), model, &tp.id, &phase, completion.is_ok())?;
            }
            completion?;

            let last_activity = em.state().connector(&phase).and_then(|c| c.last_activity.clone());
            let entry = target_phase.map(|tp| (tp.id.clone(), tp.entry_tasks(), tp.entry_decision_required));
            em.emit(EventKind::PhaseCompleted {
                phase_id: phase.clone(),
                iteration,
                last_activity: last_activity.clone(),
                actor: actor.clone(),
                closes_instance: entry.is_none(),
            });
            if let Some((target_id, options, decision_required)) = entry {
                let decision = new_decision(
                    em.state(),
                    DecisionKind::PhaseEntry,
                    options.iter().map(|t| t.to_string()).collect(),
                    em.at,
                    DecisionContext {
                        requested_by: Some(actor.clone()),
                        phase_id: Some(target_id.clone()),
                        last_activity: last_activity.clone(),
                        triggering_activity: last_activity.as_ref().map(|l| node_ids::task_activity(&l.exec_id)),
                        ..Default::default()
                    },
                );
                let decision_id = decision.id.clone();
                em.emit(EventKind::DecisionRaised { decision });
                if !decision_required && options.len() == 1 {
                    let system = AgentId::system();
                    em.emit(EventKind::DecisionResolved {
                        decision_id: decision_id.clone(),
                        choice: options[0].to_string(),
                        decided_by: system.clone(),
                    });
                    let iteration = next_iteration(em.state(), &target_id);
                    em.emit(EventKind::PhaseEntered {
                        phase_id: target_id,
                        iteration,
                        entered_via: EnteredVia::Transition,
                        triggering_activity: Some(node_ids::decision_activity(&decision_id)),
                        entry_task: Some(options[0].clone()),
                        actor: system,
                    });
                }
            }
            Ok(())
        })
    }

    /// Completes the active phase and asks which entry task of a previously
    /// executed phase to re-enter it with.
    pub fn loop_back(
        &mut self,
        target: &PhaseId,
        actor: &AgentId,
        reason: &str,
        at: Timestamp,
        hook: EventHook<'_>,
    ) -> Outcome {
        self.run("loop_back", actor, at, hook, |em| {
            require_actor(actor)?;
            require_active(em.state())?;
            let model = em.model();
            let tp = model.phase(target).ok_or_else(|| EngineError::UnknownPhase(target.clone()))?;
            if em.state().latest_iteration(target).is_none() {
                return Err(EngineError::PhaseNeverExecuted(target.clone()));
            }
            let (phase, iteration) = active_phase_checked(em.state())?;
            completion_check(em.state(), model, &phase, iteration)?;

            let last_activity = em.state().connector(&phase).and_then(|c| c.last_activity.clone());
            let trigger = last_activity.as_ref().map(|l| node_ids::task_activity(&l.exec_id));
            let options: Vec<String> = tp.entry_tasks().iter().map(|t| t.to_string()).collect();
            em.emit(EventKind::PhaseCompleted {
                phase_id: phase.clone(),
                iteration,
                last_activity: last_activity.clone(),
                actor: actor.clone(),
                closes_instance: false,
            });
            let decision = new_decision(
                em.state(),
                DecisionKind::LoopBackTarget,
                options,
                em.at,
                DecisionContext {
                    requested_by: Some(actor.clone()),
                    phase_id: Some(target.clone()),
                    reason: Some(reason.into()),
                    last_activity,
                    triggering_activity: trigger,
                    source_phase: Some(phase),
                    ..Default::default()
                },
            );
            em.emit(EventKind::DecisionRaised { decision });
            Ok(())
        })
    }

    /// Asks a human to pick the next task among the ready ones.
    pub fn raise_next_task(&mut self, actor: &AgentId, at: Timestamp, hook: EventHook<'_>) -> Outcome {
        self.run("raise_next_task", actor, at, hook, |em| {
            require_actor(actor)?;
            let (phase, _) = active_phase_checked(em.state())?;
            if em.state().pending_decisions().any(|d| d.kind == DecisionKind::NextTask) {
                return Err(EngineError::WrongState("a next-task decision is already pending".into()));
            }
            let ready = ready_tasks(em.state(), em.model());
            let pm = em.model().phase(&phase).expect("active phase is in the model");
            let options: Vec<String> =
                pm.tasks.iter().filter(|t| ready.contains(&t.id)).map(|t| t.id.to_string()).collect();
            if options.is_empty() {
                return Err(EngineError::WrongState("no task is ready".into()));
            }
            let last_activity = em.state().connector(&phase).and_then(|c| c.last_activity.clone());
            let decision = new_decision(
                em.state(),
                DecisionKind::NextTask,
                options,
                em.at,
                DecisionContext {
                    requested_by: Some(actor.clone()),
                    phase_id: Some(phase),
                    last_activity,
                    ..Default::default()
                },
            );
            em.emit(EventKind::DecisionRaised { decision });
            Ok(())
        })
    }

    pub fn resolve_decision(
        &mut self,
        decision: &DecisionId,
        choice: &str,
        actor: &AgentId,
        at: Timestamp,
        hook: EventHook<'_>,
    ) -> Outcome {
        self.run("resolve_decision", actor, at, hook, |em| {
            require_actor(actor)?;
            let d = em
                .state()
                .decisions
                .get(decision)
                .ok_or_else(|| EngineError::UnknownDecision(decision.clone()))?
                .clone();
            if !d.is_pending() {
                return Err(EngineError::AlreadyDecided(decision.clone()));
            }
            require_active(em.state())?;
            if !d.options.iter().any(|o| o == choice) {
                return Err(EngineError::InvalidChoice { decision: decision.clone(), choice: choice.into() });
            }
            if d.kind == DecisionKind::SkipApproval && choice == APPROVE && actor.is_system() {
                let phase = d.context.phase_id.as_ref().expect("skip decisions carry a phase");
                let task = d.context.task_id.as_ref().expect("skip decisions carry a task");
                if em.model().task(phase, task).is_some_and(|t| t.mandatory) {
                    return Err(EngineError::HumanDecisionRequired(decision.clone()));
                }
            }
            let resolved = EventKind::DecisionResolved {
                decision_id: decision.clone(),
                choice: choice.into(),
                decided_by: actor.clone(),
            };
            match d.kind {
                DecisionKind::PhaseEntry => {
                    let phase = d.context.phase_id.clone().expect("entry decisions carry a phase");
                    em.emit(resolved);
                    let iteration = next_iteration(em.state(), &phase);
                    em.emit(EventKind::PhaseEntered {
                        phase_id: phase,
                        iteration,
                        entered_via: EnteredVia::Transition,
                        triggering_activity: Some(node_ids::decision_activity(decision)),
                        entry_task: Some(choice.into()),
                        actor: actor.clone(),
                    });
                }
                DecisionKind::LoopBackTarget => {
                    let phase = d.context.phase_id.clone().expect("loop-back decisions carry a phase");
                    let trigger =
                        d.context.triggering_activity.clone().unwrap_or_else(|| node_ids::decision_activity(decision));
                    em.emit(resolved);
                    let iteration = next_iteration(em.state(), &phase);
                    em.emit(EventKind::LoopBack {
                        target_phase: phase.clone(),
                        from_phase: d.context.source_phase.clone(),
                        iteration,
                        triggering_activity: trigger.clone(),
                        reason: d.context.reason.clone().unwrap_or_default(),
                        actor: actor.clone(),
                        decision_id: decision.clone(),
                    });
                    em.emit(EventKind::PhaseEntered {
                        phase_id: phase,
                        iteration,
                        entered_via: EnteredVia::LoopBack,
                        triggering_activity: Some(trigger),
                        entry_task: Some(choice.into()),
                        actor: actor.clone(),
                    });
                }
                DecisionKind::SkipApproval => {
                    let phase = d.context.phase_id.clone().expect("skip decisions carry a phase");
                    let task = d.context.task_id.clone().expect("skip decisions carry a task");
                    let iteration = em.state().active_phase().map(|p| p.iteration).unwrap_or_default();
                    em.emit(resolved);
                    if choice == APPROVE {
                        let exec_id = next_exec_id(em.state());
                        em.emit(EventKind::TaskSkipped {
                            exec_id,
                            task_id: task,
                            phase_id: phase,
                            iteration,
                            reason: d.context.reason.clone().unwrap_or_default(),
                            actor: d.context.requested_by.clone().unwrap_or_else(|| actor.clone()),
                            decision_id: decision.clone(),
                        });
                    }
                }
                DecisionKind::NextTask => {
                    em.emit(resolved);
                    let task = TaskId::new(choice);
                    if let Ok((phase, iteration)) = active_phase_checked(em.state()) {
                        if check_startable(em.state(), em.model(), &phase, iteration, &task).is_ok() {
                            let exec_id = next_exec_id(em.state());
                            em.emit(EventKind::TaskStarted {
                                exec_id,
                                task_id: task,
                                phase_id: phase,
                                iteration,
                                actor: actor.clone(),
                            });
                        }
                    }
                }
                DecisionKind::TokenExpiry => {
                    let token_id = d.context.token_id.clone().expect("expiry decisions carry a token");
                    let token =
                        em.state().tokens.get(&token_id).expect("expiry decisions reference known tokens").clone();
                    em.emit(resolved);
                    match choice {
                        REDISPATCH => {
                            let window = token.deadline.saturating_sub(token.issued_at);
                            let fresh = Token {
                                token_id: next_token_id(em.state()),
                                issued_at: em.at,
                                deadline: em.at.plus_millis(window),
                                state: TokenState::Dispatched,
                                ..token.clone()
                            };
                            em.emit(EventKind::AwaitingExternal {
                                exec_id: token.task_exec_id.clone(),
                                token: fresh,
                                actor: actor.clone(),
                            });
                        }
                        ABANDON_TASK => {
                            let ex = em.state().execution(&token.task_exec_id).expect("token executions exist").clone();
                            em.emit(EventKind::TaskSkipped {
                                exec_id: ex.exec_id,
                                task_id: ex.task_id,
                                phase_id: ex.phase_id,
                                iteration: ex.iteration,
                                reason: format!("abandoned after token {token_id} expired"),
                                actor: actor.clone(),
                                decision_id: decision.clone(),
                            });
                        }
                        // Applying the resolution returns the task to InProgress.
                        _ => {}
                    }
                }
            }
            Ok(())
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn dispatch_token(
        &mut self,
        exec: &ExecId,
        destination: &StakeholderId,
        registry: &StakeholderRegistry,
        details: RequestDetails,
        deadline: Timestamp,
        actor: &AgentId,
        at: Timestamp,
        hook: EventHook<'_>,
    ) -> Outcome {
        self.run("dispatch_token", actor, at, hook, |em| {
            require_actor(actor)?;
            require_active(em.state())?;
            let ex = em.state().execution(exec).ok_or_else(|| EngineError::UnknownExecution(exec.clone()))?;
            if ex.state != TaskState::InProgress {
                return Err(EngineError::WrongState(format!(
                    "{exec} is {:?}, tokens are dispatched from InProgress tasks",
                    ex.state
                )));
            }
            let task = em.model().task(&ex.phase_id, &ex.task_id).expect("executions reference model tasks");
            if !task.external_consult_allowed {
                return Err(EngineError::ConsultNotAllowed(task.id.clone()));
            }
            let address =
                registry.get(destination).ok_or_else(|| EngineError::UnknownDestination(destination.clone()))?;
            if deadline <= em.at {
                return Err(EngineError::Malformed("deadline must be later than the dispatch time".into()));
            }
            let token = Token {
                token_id: next_token_id(em.state()),
                instance_id: em.state().id.clone(),
                task_exec_id: exec.clone(),
                requested_details: details,
                destination: address.clone(),
                issued_at: em.at,
                deadline,
                state: TokenState::Dispatched,
            };
            em.emit(EventKind::AwaitingExternal { exec_id: exec.clone(), token, actor: actor.clone() });
            Ok(())
        })
    }

    /// Accepts a stakeholder response; `at` is its arrival time.
    pub fn receive_response(
        &mut self,
        token_id: &TokenId,
        responder: &AgentId,
        payload: ResponsePayload,
        at: Timestamp,
        hook: EventHook<'_>,
    ) -> Outcome {
        self.run("receive_response", responder, at, hook, |em| {
            require_actor(responder)?;
            let token = em.state().tokens.get(token_id).ok_or_else(|| EngineError::UnknownToken(token_id.clone()))?;
            match token.state {
                TokenState::Responded => return Err(EngineError::DuplicateResponse(token_id.clone())),
                TokenState::Expired => return Err(EngineError::TokenExpired(token_id.clone())),
                TokenState::Dispatched if em.at > token.deadline => {
                    return Err(EngineError::TokenExpired(token_id.clone()))
                }
                TokenState::Dispatched => {}
            }
            let exec_id = token.task_exec_id.clone();
            em.emit(EventKind::ExternalReceived {
                exec_id,
                token_id: token_id.clone(),
                responder: responder.clone(),
                payload,
                entity_id: node_ids::token_payload(token_id),
            });
            Ok(())
        })
    }

    /// Expires every Dispatched token whose deadline is before `now`, raising
    /// one TokenExpiry decision each. Emits nothing when nothing is overdue.
    pub fn expire_tokens(&mut self, now: Timestamp, hook: EventHook<'_>) -> Vec<DecisionPoint> {
        let overdue: Vec<Token> = self
            .state
            .tokens
            .values()
            .filter(|t| t.state == TokenState::Dispatched && t.deadline < now)
            .cloned()
            .collect();
        if overdue.is_empty() {
            return Vec::new();
        }
        let system = AgentId::system();
        let events = self
            .run("expire_tokens", &system, now, hook, |em| {
                for token in &overdue {
                    let ex = em.state().execution(&token.task_exec_id).expect("token executions exist");
                    let context = DecisionContext {
                        phase_id: Some(ex.phase_id.clone()),
                        task_id: Some(ex.task_id.clone()),
                        exec_id: Some(ex.exec_id.clone()),
                        token_id: Some(token.token_id.clone()),
                        ..Default::default()
                    };
                    let decision = new_decision(
                        em.state(),
                        DecisionKind::TokenExpiry,
                        vec![REDISPATCH.into(), SKIP_CONSULTATION.into(), ABANDON_TASK.into()],
                        em.at,
                        context,
                    );
                    em.emit(EventKind::DecisionRaised { decision });
                }
                Ok(())
            })
            .expect("expiry sweeps never fail");
        events
            .into_iter()
            .filter_map(|e| match e.kind {
                EventKind::DecisionRaised { decision } => Some(decision),
                _ => None,
            })
            .collect()
    }
}

fn require_active(state: &PolicyInstance) -> Result<(), EngineError> {
    if state.status == InstanceStatus::Active {
        Ok(())
    } else {
        Err(EngineError::InstanceNotActive)
    }
}

fn active_phase_checked(state: &PolicyInstance) -> Result<(PhaseId, u32), EngineError> {
    require_active(state)?;
    state
        .active_phase()
        .map(|p| (p.phase_id.clone(), p.iteration))
        .ok_or_else(|| EngineError::WrongState("no phase is active; a phase-entry decision is pending".into()))
}

fn next_exec_id(state: &PolicyInstance) -> ExecId {
    ExecId::new(format!("{}/x{}", state.id, state.counters.exec + 1))
}

fn next_token_id(state: &PolicyInstance) -> TokenId {
    TokenId::new(format!("{}/t{}", state.id, state.counters.token + 1))
}

fn next_iteration(state: &PolicyInstance, phase: &PhaseId) -> u32 {
    state.latest_iteration(phase).map_or(1, |p| p.iteration + 1)
}

fn new_decision(
    state: &PolicyInstance,
    kind: DecisionKind,
    options: Vec<String>,
    at: Timestamp,
    context: DecisionContext,
) -> DecisionPoint {
    DecisionPoint {
        id: DecisionId::new(format!("{}/d{}", state.id, state.counters.decision + 1)),
        instance_id: state.id.clone(),
        kind,
        options,
        chosen: None,
        decided_by: None,
        raised_at: at,
        decided_at: None,
        context,
    }
}

/// Ready = unstarted in this iteration, not held by a pending skip request,
/// every precedence task terminal, and the precondition (if any) holds.
fn check_startable(
    state: &PolicyInstance,
    model: &MetaMetaModel,
    phase: &PhaseId,
    iteration: u32,
    task: &TaskId,
) -> Result<(), EngineError> {
    let def = model.task(phase, task).ok_or_else(|| EngineError::UnknownTask(task.clone()))?;
    let execs: BTreeMap<&TaskId, TaskState> =
        state.executions_in(phase, iteration).map(|e| (&e.task_id, e.state)).collect();
    if let Some(s) = execs.get(task) {
        return Err(EngineError::WrongState(format!("{task} is already {s:?} in this iteration")));
    }
    if state.has_pending_skip(phase, iteration, task) {
        return Err(EngineError::WrongState(format!("a skip approval for {task} is pending")));
    }
    let waiting: Vec<&str> = def
        .precedence
        .iter()
        .filter(|dep| !execs.get(dep).is_some_and(|s| s.is_terminal()))
        .map(TaskId::as_str)
        .collect();
    if !waiting.is_empty() {
        return Err(EngineError::PrecedenceViolation {
            task: task.clone(),
            detail: format!("requires {}", waiting.join(", ")),
        });
    }
    if let Some(cond) = &def.precondition {
        let view = InstanceView { state, model, owner: phase };
        if !evaluate_condition(cond, &view).unwrap_or(false) {
            return Err(EngineError::PrecedenceViolation {
                task: task.clone(),
                detail: format!("precondition {cond} does not hold"),
            });
        }
    }
    Ok(())
}

pub(crate) fn ready_tasks(state: &PolicyInstance, model: &MetaMetaModel) -> BTreeSet<TaskId> {
    let Ok((phase, iteration)) = active_phase_checked(state) else {
        return BTreeSet::new();
    };
    let Some(pm) = model.phase(&phase) else {
        return BTreeSet::new();
    };
    pm.tasks
        .iter()
        .filter(|t| check_startable(state, model, &phase, iteration, &t.id).is_ok())
        .map(|t| t.id.clone())
        .collect()
}

/// Errors that keep the active iteration from completing.
fn completion_check(
    state: &PolicyInstance,
    model: &MetaMetaModel,
    phase: &PhaseId,
    iteration: u32,
) -> Result<(), EngineError> {
    if state.pending_decisions().next().is_some() {
        return Err(EngineError::PendingDecisions);
    }
    let execs: Vec<&TaskExecution> = state.executions_in(phase, iteration).collect();
    if let Some(e) = execs.iter().find(|e| !e.state.is_terminal()) {
        return Err(EngineError::WrongState(format!("{} ({}) is still {:?}", e.exec_id, e.task_id, e.state)));
    }
    let pm = model.phase(phase).expect("active phase is in the model");
    for t in pm.tasks.iter().filter(|t| t.mandatory) {
        if !execs.iter().any(|e| e.task_id == t.id) {
            return Err(EngineError::MandatoryTaskIncomplete(t.id.clone()));
        }
    }
    if execs.is_empty() {
        return Err(EngineError::EmptyIteration);
    }
    Ok(())
}

/// A first (non loop-back) entry into `target` needs every required phase to
/// have a completed iteration; the phase being completed right now counts
/// when it is completable.
fn check_phase_order(
    state: &PolicyInstance,
    model: &MetaMetaModel,
    target: &PhaseId,
    completing: &PhaseId,
    completable: bool,
) -> Result<(), EngineError> {
    if state.latest_iteration(target).is_some() {
        return Ok(());
    }
    for c in model.constraints_on(target) {
        let done = state.completed_iterations(&c.requires) > 0 || (completable && &c.requires == completing);
        if !done {
            return Err(EngineError::PhaseOrderViolation { phase: target.clone(), requires: c.requires.clone() });
        }
    }
    Ok(())
}

/// Condition view over an instance, resolving bare task references in
/// `owner` first.
pub struct InstanceView<'a> {
    pub state: &'a PolicyInstance,
    pub model: &'a MetaMetaModel,
    pub owner: &'a PhaseId,
}

impl InstanceView<'_> {
    fn latest_execs(&self, r: &TaskRef) -> Option<Vec<&TaskExecution>> {
        let (phase, task) = self.model.resolve_task_ref(Some(self.owner), r)?;
        let Some(latest) = self.state.latest_iteration(&phase) else {
            return Some(Vec::new());
        };
        Some(self.state.executions_in(&phase, latest.iteration).filter(|e| e.task_id == task).collect())
    }
}

impl ConditionState for InstanceView<'_> {
    fn task_completed(&self, task: &TaskRef) -> Option<bool> {
        Some(self.latest_execs(task)?.iter().any(|e| e.state == TaskState::Completed))
    }

    fn phase_completed(&self, phase: &PhaseId) -> Option<bool> {
        self.model.phase(phase)?;
        Some(self.state.completed_iterations(phase) > 0)
    }

    fn task_responded(&self, task: &TaskRef) -> Option<bool> {
        let execs = self.latest_execs(task)?;
        Some(
            self.state
                .tokens
                .values()
                .any(|t| t.state == TokenState::Responded && execs.iter().any(|e| e.exec_id == t.task_exec_id)),
        )
    }
}

fn initial_state(model: &MetaMetaModel, first: &EngineEvent) -> Result<PolicyInstance, ReplayError> {
    let EventKind::InstanceCreated { model_version, created_by } = &first.kind else {
        return Err(ReplayError { seq: first.seq, reason: "log must start with InstanceCreated".into() });
    };
    if first.seq != 1 || model_version != &model.version {
        return Err(ReplayError { seq: first.seq, reason: "creation event does not match the pinned model".into() });
    }
    Ok(PolicyInstance {
        id: first.instance_id.clone(),
        model_version: model_version.clone(),
        status: InstanceStatus::Active,
        created_by: created_by.clone(),
        created_at: first.at,
        phase_executions: Vec::new(),
        task_executions: BTreeMap::new(),
        connectors: model
            .phases
            .iter()
            .map(|p| (p.id.clone(), Connector { phase_id: p.id.clone(), last_activity: None }))
            .collect(),
        decisions: BTreeMap::new(),
        tokens: BTreeMap::new(),
        entities: BTreeSet::new(),
        last_seq: 1,
        last_at: first.at,
        counters: Counters::default(),
    })
}

fn set_last_activity(state: &mut PolicyInstance, exec: &ExecId, summary: String, at: Timestamp) {
    let ex = &state.task_executions[exec];
    let last = LastActivity { exec_id: exec.clone(), task_id: ex.task_id.clone(), summary, at };
    if let Some(c) = state.connectors.get_mut(&ex.phase_id) {
        c.last_activity = Some(last);
    }
}

/// The single place where instance state changes.
fn apply(state: &mut PolicyInstance, model: &MetaMetaModel, event: &EngineEvent) -> Result<(), ReplayError> {
    let fail = |reason: &str| ReplayError { seq: event.seq, reason: reason.into() };
    let at = event.at;
    match &event.kind {
        EventKind::InstanceCreated { .. } => return Err(fail("duplicate InstanceCreated")),
        EventKind::PhaseEntered { phase_id, iteration, entered_via, triggering_activity, entry_task, .. } => {
            if model.phase(phase_id).is_none() {
                return Err(fail("unknown phase"));
            }
            state.phase_executions.push(PhaseExecution {
                phase_id: phase_id.clone(),
                iteration: *iteration,
                state: PhaseState::Active,
                entered_via: *entered_via,
                triggering_activity: triggering_activity.clone(),
                entry_task: entry_task.clone(),
                entered_at: at,
            });
            if let Some(c) = state.connectors.get_mut(phase_id) {
                c.last_activity = None;
            }
        }
        EventKind::PhaseCompleted { phase_id, iteration, closes_instance, .. } => {
            let pe = state
                .phase_executions
                .iter_mut()
                .rev()
                .find(|p| &p.phase_id == phase_id && p.iteration == *iteration && p.state == PhaseState::Active)
                .ok_or_else(|| fail("completing a phase that is not active"))?;
            pe.state = PhaseState::Completed;
            if *closes_instance {
                state.status = InstanceStatus::Completed;
            }
        }
        EventKind::TaskStarted { exec_id, task_id, phase_id, iteration, actor } => {
            if model.task(phase_id, task_id).is_none() {
                return Err(fail("unknown task"));
            }
            state.counters.exec += 1;
            state.task_executions.insert(
                exec_id.clone(),
                TaskExecution {
                    exec_id: exec_id.clone(),
                    task_id: task_id.clone(),
                    phase_id: phase_id.clone(),
                    iteration: *iteration,
                    state: TaskState::InProgress,
                    actor: actor.clone(),
                    inputs: Vec::new(),
                    outputs: Vec::new(),
                    comments: Vec::new(),
                    started_at: at,
                    ended_at: None,
                    terminal_seq: None,
                },
            );
        }
        EventKind::TaskCompleted { exec_id, outputs, inputs, comment, actor, .. } => {
            let ex = state.task_executions.get_mut(exec_id).ok_or_else(|| fail("unknown execution"))?;
            ex.state = TaskState::Completed;
            ex.ended_at = Some(at);
            ex.terminal_seq = Some(event.seq);
            ex.outputs.extend(outputs.iter().cloned());
            for i in inputs {
                if !ex.inputs.contains(i) {
                    ex.inputs.push(i.clone());
                }
            }
            ex.comments.extend(comment.iter().cloned());
            let summary = format!("{} completed by {actor}", ex.task_id);
            state.entities.extend(outputs.iter().cloned());
            set_last_activity(state, exec_id, summary, at);
        }
        EventKind::TaskSkipped { exec_id, task_id, phase_id, iteration, reason, actor, .. } => {
            match state.task_executions.get_mut(exec_id) {
                Some(ex) => {
                    ex.state = TaskState::Skipped;
                    ex.ended_at = Some(at);
                    ex.terminal_seq = Some(event.seq);
                    ex.comments.push(reason.clone());
                }
                None => {
                    if model.task(phase_id, task_id).is_none() {
                        return Err(fail("unknown task"));
                    }
                    state.counters.exec += 1;
                    state.task_executions.insert(
                        exec_id.clone(),
                        TaskExecution {
                            exec_id: exec_id.clone(),
                            task_id: task_id.clone(),
                            phase_id: phase_id.clone(),
                            iteration: *iteration,
                            state: TaskState::Skipped,
                            actor: actor.clone(),
                            inputs: Vec::new(),
                            outputs: Vec::new(),
                            comments: vec![reason.clone()],
                            started_at: at,
                            ended_at: Some(at),
                            terminal_seq: Some(event.seq),
                        },
                    );
                }
            }
            set_last_activity(state, exec_id, format!("{task_id} skipped: {reason}"), at);
        }
        EventKind::AwaitingExternal { exec_id, token, .. } => {
            let ex = state.task_executions.get_mut(exec_id).ok_or_else(|| fail("unknown execution"))?;
            ex.state = TaskState::AwaitingExternal;
            state.counters.token += 1;
            state.tokens.insert(token.token_id.clone(), token.clone());
        }
        EventKind::ExternalReceived { exec_id, token_id, entity_id, .. } => {
            let token = state.tokens.get_mut(token_id).ok_or_else(|| fail("unknown token"))?;
            token.state = TokenState::Responded;
            let ex = state.task_executions.get_mut(exec_id).ok_or_else(|| fail("unknown execution"))?;
            ex.state = TaskState::InProgress;
            ex.inputs.push(entity_id.clone());
            state.entities.insert(entity_id.clone());
        }
        EventKind::DecisionRaised { decision } => {
            state.counters.decision += 1;
            if decision.kind == DecisionKind::TokenExpiry {
                let token_id = decision.context.token_id.as_ref().ok_or_else(|| fail("expiry without token"))?;
                let token = state.tokens.get_mut(token_id).ok_or_else(|| fail("unknown token"))?;
                token.state = TokenState::Expired;
            }
            state.decisions.insert(decision.id.clone(), decision.clone());
        }
        EventKind::DecisionResolved { decision_id, choice, decided_by } => {
            let d = state.decisions.get_mut(decision_id).ok_or_else(|| fail("unknown decision"))?;
            if !d.is_pending() {
                return Err(fail("decision already resolved"));
            }
            d.chosen = Some(choice.clone());
            d.decided_by = Some(decided_by.clone());
            d.decided_at = Some(at);
            if d.kind == DecisionKind::TokenExpiry && choice == SKIP_CONSULTATION {
                let exec = d.context.exec_id.clone().ok_or_else(|| fail("expiry without execution"))?;
                let ex = state.task_executions.get_mut(&exec).ok_or_else(|| fail("unknown execution"))?;
                ex.state = TaskState::InProgress;
            }
        }
        EventKind::LoopBack { .. } | EventKind::CommandRejected { .. } => {}
    }
    state.last_seq = event.seq;
    state.last_at = at;
    Ok(())
}
