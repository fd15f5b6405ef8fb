//! The embedded system: model registry, instances, the external connector
//! and the provenance capture pipeline behind one command surface.
//!
//! Callers supply every timestamp. Provenance bundles are handed to the
//! [`Recorder`] in event order; bundles the recorder refuses stay queued and
//! are retried before any newer bundle.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::engine::{DecisionPoint, EngineError, EngineEvent, EventKind, InstanceRuntime, PolicyInstance, Rejected};
use crate::ids::{AgentId, DecisionId, ExecId, InstanceId, NodeId, PhaseId, StakeholderId, TaskId, TokenId, VersionId};
use crate::metamodel::{MetaMetaModel, MetaModelRegistry, RegistryError};
use crate::prov::{map_event, ProvContext, ProvDocument};
use crate::routing::{
    RejectedResponse, RequestDetails, ResponseEnvelope, RoutingError, StakeholderAddress, StakeholderRegistry,
    TokenState,
};
use crate::store::{ProvStore, StoreError};
use crate::time::Timestamp;

/// Durable sink for provenance bundles; must be idempotent on
/// (instance_id, source_seq).
pub trait Recorder {
    type Error: fmt::Display;

    fn record(&mut self, document: ProvDocument) -> Result<u64, Self::Error>;
}

impl Recorder for ProvStore {
    type Error = StoreError;

    fn record(&mut self, document: ProvDocument) -> Result<u64, StoreError> {
        self.append(document)
    }
}

/// A refused command. `rejection` is the logged `CommandRejected` event when
/// the command reached an instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandError {
    pub error: EngineError,
    pub rejection: Option<Box<EngineEvent>>,
}

impl fmt::Display for CommandError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.error.fmt(f)
    }
}

impl From<EngineError> for CommandError {
    fn from(error: EngineError) -> Self {
        Self { error, rejection: None }
    }
}

impl From<Rejected> for CommandError {
    fn from(r: Rejected) -> Self {
        Self { error: r.error, rejection: Some(r.event) }
    }
}

pub type CommandResult = Result<Vec<EngineEvent>, CommandError>;

/// One engine or connector operation, addressed by public identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verb", rename_all = "snake_case")]
pub enum Command {
    CreateInstance {
        version: Option<VersionId>,
        actor: AgentId,
    },
    StartTask {
        instance: InstanceId,
        task: TaskId,
        actor: AgentId,
    },
    CompleteTask {
        instance: InstanceId,
        task: TaskId,
        #[serde(default)]
        outputs: Vec<String>,
        #[serde(default)]
        inputs: Vec<NodeId>,
        #[serde(default)]
        comment: Option<String>,
        actor: AgentId,
    },
    SkipTask {
        instance: InstanceId,
        task: TaskId,
        reason: String,
        actor: AgentId,
    },
    RequestTransition {
        instance: InstanceId,
        #[serde(default)]
        target: Option<PhaseId>,
        actor: AgentId,
    },
    LoopBack {
        instance: InstanceId,
        target: PhaseId,
        reason: String,
        actor: AgentId,
    },
    RaiseNextTask {
        instance: InstanceId,
        actor: AgentId,
    },
    ResolveDecision {
        decision: DecisionId,
        choice: String,
        actor: AgentId,
    },
    DispatchToken {
        instance: InstanceId,
        task: TaskId,
        destination: StakeholderId,
        details: RequestDetails,
        deadline: Timestamp,
        actor: AgentId,
    },
    RespondToken {
        envelope: ResponseEnvelope,
    },
    ExpireTokens,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExpirySweep {
    pub decisions: Vec<DecisionPoint>,
    pub events: Vec<EngineEvent>,
}

pub struct Runtime<R: Recorder> {
    models: MetaModelRegistry,
    default_version: Option<VersionId>,
    instances: BTreeMap<InstanceId, InstanceRuntime>,
    next_instance: u64,
    stakeholders: StakeholderRegistry,
    token_index: BTreeMap<TokenId, InstanceId>,
    rejected_responses: Vec<RejectedResponse>,
    recorder: R,
    backlog: VecDeque<ProvDocument>,
    last_record_error: Option<String>,
}

/// Instance that owns a `{instance}/...` id.
fn owner_of(id: &str) -> InstanceId {
    InstanceId::new(id.rsplit_once('/').map_or(id, |(head, _)| head))
}

impl<R: Recorder> Runtime<R> {
    pub fn new(recorder: R) -> Self {
        Self {
            models: MetaModelRegistry::new(),
            default_version: None,
            instances: BTreeMap::new(),
            next_instance: 1,
            stakeholders: StakeholderRegistry::new(),
            token_index: BTreeMap::new(),
            rejected_responses: Vec::new(),
            recorder,
            backlog: VecDeque::new(),
            last_record_error: None,
        }
    }

    pub fn recorder(&self) -> &R {
        &self.recorder
    }

    pub fn recorder_mut(&mut self) -> &mut R {
        &mut self.recorder
    }

    pub fn models(&self) -> &MetaModelRegistry {
        &self.models
    }

    /// Registers a validated model. The first registered version becomes
    /// the default for instances created without an explicit version.
    pub fn register_model(&mut self, model: MetaMetaModel) -> Result<VersionId, RegistryError> {
        let version = model.version.clone();
        self.models.register_version(model)?;
        self.default_version.get_or_insert_with(|| version.clone());
        Ok(version)
    }

    pub fn default_version(&self) -> Option<&VersionId> {
        self.default_version.as_ref()
    }

    pub fn set_default_version(&mut self, version: &VersionId) -> Result<(), EngineError> {
        if !self.models.contains(version) {
            return Err(EngineError::UnknownVersion(version.clone()));
        }
        self.default_version = Some(version.clone());
        Ok(())
    }

    pub fn stakeholders(&self) -> &StakeholderRegistry {
        &self.stakeholders
    }

    pub fn register_stakeholder(&mut self, addr: StakeholderAddress) -> Result<(), RoutingError> {
        self.stakeholders.register(addr)
    }

    pub fn rejected_responses(&self) -> &[RejectedResponse] {
        &self.rejected_responses
    }

    /// Reloads the refused-response log (startup recovery).
    pub fn restore_rejections(&mut self, log: Vec<RejectedResponse>) {
        self.rejected_responses = log;
    }

    pub fn instance(&self, id: &InstanceId) -> Option<&InstanceRuntime> {
        self.instances.get(id)
    }

    pub fn instances(&self) -> impl Iterator<Item = &InstanceRuntime> {
        self.instances.values()
    }

    pub fn instance_state(&self, id: &InstanceId) -> Result<&PolicyInstance, EngineError> {
        self.instances.get(id).map(InstanceRuntime::state).ok_or_else(|| EngineError::UnknownInstance(id.clone()))
    }

    /// Events with seq ≥ `from_seq`.
    pub fn events(&self, id: &InstanceId, from_seq: u64) -> Result<&[EngineEvent], EngineError> {
        self.instances.get(id).map(|i| i.events_from(from_seq)).ok_or_else(|| EngineError::UnknownInstance(id.clone()))
    }

    pub fn pending_provenance(&self) -> usize {
        self.backlog.len()
    }

    pub fn last_record_error(&self) -> Option<&str> {
        self.last_record_error.as_deref()
    }

    /// Hands queued bundles to the recorder in order, stopping at the first
    /// failure.
    pub fn flush_provenance(&mut self) -> Result<(), String> {
        while let Some(doc) = self.backlog.front() {
            match self.recorder.record(doc.clone()) {
                Ok(_) => {
                    self.backlog.pop_front();
                }
                Err(e) => {
                    let msg = e.to_string();
                    self.last_record_error = Some(msg.clone());
                    return Err(msg);
                }
            }
        }
        self.last_record_error = None;
        Ok(())
    }

    fn queue(&mut self, docs: Vec<ProvDocument>) {
        self.backlog.extend(docs.into_iter().filter(|d| !d.is_empty()));
        let _ = self.flush_provenance();
    }

    fn with_instance<T>(
        &mut self,
        id: &InstanceId,
        f: impl FnOnce(&mut InstanceRuntime, &StakeholderRegistry, &mut dyn FnMut(&EngineEvent, &PolicyInstance)) -> T,
    ) -> Result<T, EngineError> {
        let inst = self.instances.get_mut(id).ok_or_else(|| EngineError::UnknownInstance(id.clone()))?;
        let model = Arc::clone(inst.model());
        let mut docs = Vec::new();
        let mut hook =
            |e: &EngineEvent, s: &PolicyInstance| docs.push(map_event(e, ProvContext { state: s, model: &model }));
        let out = f(inst, &self.stakeholders, &mut hook);
        self.queue(docs);
        Ok(out)
    }

    fn command(
        &mut self,
        id: &InstanceId,
        f: impl FnOnce(
            &mut InstanceRuntime,
            &StakeholderRegistry,
            &mut dyn FnMut(&EngineEvent, &PolicyInstance),
        ) -> Result<Vec<EngineEvent>, Rejected>,
    ) -> CommandResult {
        let outcome = self.with_instance(id, f)?;
        if let Ok(events) = &outcome {
            self.index_tokens(events);
        }
        outcome.map_err(CommandError::from)
    }

    fn index_tokens(&mut self, events: &[EngineEvent]) {
        for e in events {
            if let EventKind::AwaitingExternal { token, .. } = &e.kind {
                self.token_index.insert(token.token_id.clone(), e.instance_id.clone());
            }
        }
    }

    pub fn create_instance(
        &mut self,
        version: Option<&VersionId>,
        initiator: &AgentId,
        at: Timestamp,
    ) -> CommandResult {
        let version = match version.or(self.default_version.as_ref()) {
            Some(v) => v.clone(),
            None => return Err(EngineError::UnknownVersion(VersionId::new("")).into()),
        };
        let model = self.models.get(&version).ok_or(EngineError::UnknownVersion(version))?;
        let id = InstanceId::new(format!("pi-{}", self.next_instance));
        let mut docs = Vec::new();
        let mut hook =
            |e: &EngineEvent, s: &PolicyInstance| docs.push(map_event(e, ProvContext { state: s, model: &model }));
        let (rt, events) = InstanceRuntime::create(id.clone(), Arc::clone(&model), initiator.clone(), at, &mut hook)?;
        self.next_instance += 1;
        self.instances.insert(id, rt);
        self.queue(docs);
        Ok(events)
    }

    /// Adds an instance rebuilt from its log (startup recovery). Provenance
    /// is not re-emitted; see [`reconcile_provenance`](Self::reconcile_provenance).
    pub fn restore_instance(&mut self, rt: InstanceRuntime) {
        let id = rt.state().id.clone();
        if let Some(n) = id.as_str().strip_prefix("pi-").and_then(|n| n.parse::<u64>().ok()) {
            self.next_instance = self.next_instance.max(n + 1);
        }
        for t in rt.state().tokens.values() {
            self.token_index.insert(t.token_id.clone(), id.clone());
        }
        self.instances.insert(id, rt);
    }

    /// Re-emits the bundle of every event the recorder has not acknowledged,
    /// judged by `recorded(instance)` = highest stored source seq.
    pub fn reconcile_provenance(&mut self, recorded: impl Fn(&InstanceId) -> Option<u64>) {
        let mut docs = Vec::new();
        for inst in self.instances.values() {
            let done = recorded(&inst.state().id).unwrap_or(0);
            if inst.state().last_seq <= done {
                continue;
            }
            let model = Arc::clone(inst.model());
            let mut hook = |e: &EngineEvent, s: &PolicyInstance| {
                if e.seq > done {
                    docs.push(map_event(e, ProvContext { state: s, model: &model }));
                }
            };
            InstanceRuntime::replay_with(Arc::clone(inst.model()), inst.log().iter().cloned(), &mut hook)
                .expect("live logs replay");
        }
        self.queue(docs);
    }

    pub fn ready_tasks(&self, id: &InstanceId) -> Result<Vec<TaskId>, EngineError> {
        let inst = self.instances.get(id).ok_or_else(|| EngineError::UnknownInstance(id.clone()))?;
        Ok(inst.ready_tasks().into_iter().collect())
    }

    pub fn pending_decisions(&self, id: &InstanceId) -> Result<Vec<DecisionPoint>, EngineError> {
        Ok(self.instance_state(id)?.pending_decisions().cloned().collect())
    }

    pub fn start_task(&mut self, id: &InstanceId, task: &TaskId, actor: &AgentId, at: Timestamp) -> CommandResult {
        self.command(id, |i, _, h| i.start_task(task, actor, at, h))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn complete_task(
        &mut self,
        id: &InstanceId,
        exec: &ExecId,
        outputs: &[String],
        inputs: &[NodeId],
        comment: Option<String>,
        actor: &AgentId,
        at: Timestamp,
    ) -> CommandResult {
        self.command(id, |i, _, h| i.complete_task(exec, outputs, inputs, comment, actor, at, h))
    }

    /// Completes the running execution of `task` in the active iteration.
    #[allow(clippy::too_many_arguments)]
    pub fn complete_task_named(
        &mut self,
        id: &InstanceId,
        task: &TaskId,
        outputs: &[String],
        inputs: &[NodeId],
        comment: Option<String>,
        actor: &AgentId,
        at: Timestamp,
    ) -> CommandResult {
        self.command(id, |i, _, h| match i.current_execution(task).map(|e| e.exec_id.clone()) {
            Some(exec) => i.complete_task(&exec, outputs, inputs, comment, actor, at, h),
            None => {
                let error = if i.model().phases.iter().any(|p| p.task(task).is_some()) {
                    EngineError::WrongState(format!("{task} has no running execution in the active iteration"))
                } else {
                    EngineError::UnknownTask(task.clone())
                };
                Err(i.reject("complete_task", actor, error, at, h))
            }
        })
    }

    pub fn skip_task(
        &mut self,
        id: &InstanceId,
        task: &TaskId,
        actor: &AgentId,
        reason: &str,
        at: Timestamp,
    ) -> CommandResult {
        self.command(id, |i, _, h| i.request_skip(task, actor, reason, at, h))
    }

    pub fn request_phase_transition(
        &mut self,
        id: &InstanceId,
        target: Option<&PhaseId>,
        actor: &AgentId,
        at: Timestamp,
    ) -> CommandResult {
        self.command(id, |i, _, h| i.request_phase_transition(target, actor, at, h))
    }

    pub fn loop_back(
        &mut self,
        id: &InstanceId,
        target: &PhaseId,
        actor: &AgentId,
        reason: &str,
        at: Timestamp,
    ) -> CommandResult {
        self.command(id, |i, _, h| i.loop_back(target, actor, reason, at, h))
    }

    pub fn raise_next_task(&mut self, id: &InstanceId, actor: &AgentId, at: Timestamp) -> CommandResult {
        self.command(id, |i, _, h| i.raise_next_task(actor, at, h))
    }

    /// Instance that owns a decision, if the decision exists.
    pub fn decision_owner(&self, decision: &DecisionId) -> Option<InstanceId> {
        let owner = owner_of(decision.as_str());
        self.instances.get(&owner)?.state().decisions.contains_key(decision).then_some(owner)
    }

    pub fn decision(&self, decision: &DecisionId) -> Option<&DecisionPoint> {
        let owner = self.decision_owner(decision)?;
        self.instances[&owner].state().decisions.get(decision)
    }

    pub fn resolve_decision(
        &mut self,
        decision: &DecisionId,
        choice: &str,
        actor: &AgentId,
        at: Timestamp,
    ) -> CommandResult {
        let owner = self.decision_owner(decision).ok_or_else(|| EngineError::UnknownDecision(decision.clone()))?;
        self.command(&owner, |i, _, h| i.resolve_decision(decision, choice, actor, at, h))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn dispatch_token(
        &mut self,
        id: &InstanceId,
        exec: &ExecId,
        destination: &StakeholderId,
        details: RequestDetails,
        deadline: Timestamp,
        actor: &AgentId,
        at: Timestamp,
    ) -> CommandResult {
        self.command(id, |i, reg, h| i.dispatch_token(exec, destination, reg, details, deadline, actor, at, h))
    }

    /// Dispatches a token from the running execution of `task`.
    #[allow(clippy::too_many_arguments)]
    pub fn dispatch_token_named(
        &mut self,
        id: &InstanceId,
        task: &TaskId,
        destination: &StakeholderId,
        details: RequestDetails,
        deadline: Timestamp,
        actor: &AgentId,
        at: Timestamp,
    ) -> CommandResult {
        self.command(id, |i, reg, h| match i.current_execution(task).map(|e| e.exec_id.clone()) {
            Some(exec) => i.dispatch_token(&exec, destination, reg, details, deadline, actor, at, h),
            None => {
                let error = EngineError::WrongState(format!("{task} has no running execution in the active iteration"));
                Err(i.reject("dispatch_token", actor, error, at, h))
            }
        })
    }

    /// Routes a stakeholder response by token id; `at` is its arrival time.
    /// Refused responses are kept in the rejection log.
    pub fn receive_response(&mut self, envelope: ResponseEnvelope, at: Timestamp) -> CommandResult {
        let Some(owner) = self.token_index.get(&envelope.token_id).cloned() else {
            self.rejected_responses.push(RejectedResponse { envelope: envelope.clone(), code: "unknown-token".into() });
            return Err(EngineError::UnknownToken(envelope.token_id).into());
        };
        let result = self.command(&owner, |i, _, h| {
            i.receive_response(&envelope.token_id, &envelope.responder, envelope.payload.clone(), at, h)
        });
        if let Err(e) = &result {
            self.rejected_responses.push(RejectedResponse { envelope, code: e.error.code().to_string() });
        }
        result
    }

    /// Expires overdue tokens across all instances.
    pub fn expire_tokens(&mut self, now: Timestamp) -> ExpirySweep {
        let ids: Vec<InstanceId> = self
            .instances
            .values()
            .filter(|i| i.state().tokens.values().any(|t| t.state == TokenState::Dispatched && t.deadline < now))
            .map(|i| i.state().id.clone())
            .collect();
        let mut sweep = ExpirySweep::default();
        for id in ids {
            let (decisions, events) = self
                .with_instance(&id, |i, _, h| {
                    let before = i.state().last_seq;
                    let decisions = i.expire_tokens(now, h);
                    (decisions, i.events_from(before + 1).to_vec())
                })
                .expect("listed instances exist");
            sweep.decisions.extend(decisions);
            sweep.events.extend(events);
        }
        sweep
    }

    /// Applies one [`Command`] at time `at`.
    pub fn execute(&mut self, command: &Command, at: Timestamp) -> CommandResult {
        match command {
            Command::CreateInstance { version, actor } => self.create_instance(version.as_ref(), actor, at),
            Command::StartTask { instance, task, actor } => self.start_task(instance, task, actor, at),
            Command::CompleteTask { instance, task, outputs, inputs, comment, actor } => {
                self.complete_task_named(instance, task, outputs, inputs, comment.clone(), actor, at)
            }
            Command::SkipTask { instance, task, reason, actor } => self.skip_task(instance, task, actor, reason, at),
            Command::RequestTransition { instance, target, actor } => {
                self.request_phase_transition(instance, target.as_ref(), actor, at)
            }
            Command::LoopBack { instance, target, reason, actor } => {
                self.loop_back(instance, target, actor, reason, at)
            }
            Command::RaiseNextTask { instance, actor } => self.raise_next_task(instance, actor, at),
            Command::ResolveDecision { decision, choice, actor } => self.resolve_decision(decision, choice, actor, at),
            Command::DispatchToken { instance, task, destination, details, deadline, actor } => {
                self.dispatch_token_named(instance, task, destination, details.clone(), *deadline, actor, at)
            }
            Command::RespondToken { envelope } => self.receive_response(envelope.clone(), at),
            Command::ExpireTokens => Ok(self.expire_tokens(at).events),
        }
    }

    /// Instance that owns a token, if the token was ever dispatched.
    pub fn token_owner(&self, token: &TokenId) -> Option<&InstanceId> {
        self.token_index.get(token)
    }
}
