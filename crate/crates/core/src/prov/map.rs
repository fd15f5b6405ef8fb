use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::node_ids as ids;
use super::*;
use crate::engine::{EngineEvent, EnteredVia, EventKind, PolicyInstance, TaskExecution};
use crate::ids::AgentId;
use crate::metamodel::MetaMetaModel;
use crate::routing::StakeholderKind;

/// Instance state as of the event being mapped (after it was applied).
#[derive(Clone, Copy)]
pub struct ProvContext<'a> {
    pub state: &'a PolicyInstance,
    pub model: &'a MetaMetaModel,
}

struct Delta {
    doc: ProvDocument,
    instance: String,
}

impl Delta {
    fn attrs(&self, pairs: &[(&str, String)]) -> Attrs {
        let mut a = Attrs::new();
        a.insert("pcp:instance".into(), self.instance.clone());
        for (k, v) in pairs {
            a.insert(format!("pcp:{k}"), v.clone());
        }
        a
    }

    fn activity(
        &mut self,
        id: NodeId,
        ty: ActivityType,
        started: Timestamp,
        ended: Option<Timestamp>,
        pairs: &[(&str, String)],
    ) {
        let attributes = self.attrs(pairs);
        self.doc.activities.push(ProvActivity {
            id,
            activity_type: ty,
            started_at: started,
            ended_at: ended,
            attributes,
        });
    }

    fn entity(&mut self, id: NodeId, kind: EntityKind, at: Timestamp, pairs: &[(&str, String)]) {
        let attributes = self.attrs(pairs);
        self.doc.entities.push(ProvEntity { id, kind, generated_at: at, attributes });
    }

    fn agent(&mut self, agent: &AgentId, ty: AgentType) -> NodeId {
        let id = ids::agent(agent);
        if !self.doc.agents.iter().any(|a| a.id == id) {
            let mut attributes = Attrs::new();
            attributes.insert("pcp:agent_id".into(), agent.to_string());
            self.doc.agents.push(ProvAgent { id: id.clone(), agent_type: ty, attributes });
        }
        id
    }

    fn person(&mut self, agent: &AgentId) -> NodeId {
        let ty = if agent.is_system() { AgentType::SoftwareAgent } else { AgentType::Person };
        self.agent(agent, ty)
    }

    fn rel(&mut self, kind: RelationKind, source: &NodeId, target: &NodeId, at: Option<Timestamp>) {
        let r = ProvRelation { kind, source: source.clone(), target: target.clone(), role: None, at };
        if !self.doc.relations.iter().any(|x| x.key() == r.key()) {
            self.doc.relations.push(r);
        }
    }

    fn associate(&mut self, activity: &NodeId, agent: &AgentId) {
        let a = self.person(agent);
        self.rel(RelationKind::WasAssociatedWith, activity, &a, None);
    }
}

fn task_attrs(ex: &TaskExecution) -> Vec<(&'static str, String)> {
    alloc::vec![
        ("phase", ex.phase_id.to_string()),
        ("iteration", ex.iteration.to_string()),
        ("task", ex.task_id.to_string()),
    ]
}

/// Maps one engine event to its provenance bundle. Pure; `CommandRejected`
/// yields an empty bundle.
pub fn map_event(event: &EngineEvent, ctx: ProvContext<'_>) -> ProvDocument {
    let at = event.at;
    let inst = &event.instance_id;
    let mut d = Delta {
        doc: ProvDocument {
            header: BundleHeader {
                id: format!("{inst}#{}", event.seq),
                instance_id: Some(inst.clone()),
                source_seq: Some(SeqRange { first: event.seq, last: event.seq }),
                emitted_at: Some(at),
                event_type: Some(event.kind.name().into()),
            },
            ..Default::default()
        },
        instance: inst.to_string(),
    };
    let event_act = ids::event_activity(inst, event.seq);
    match &event.kind {
        EventKind::InstanceCreated { model_version, created_by } => {
            d.activity(
                event_act.clone(),
                ActivityType::InstanceCreation,
                at,
                Some(at),
                &[("model_version", model_version.to_string())],
            );
            d.associate(&event_act, created_by);
        }
        EventKind::PhaseEntered { phase_id, iteration, entered_via, triggering_activity, entry_task, actor } => {
            let mut pairs = alloc::vec![
                ("phase", phase_id.to_string()),
                ("iteration", iteration.to_string()),
                ("transition", "entered".to_string()),
                ("entered_via", format!("{entered_via:?}")),
                ("model_version", ctx.state.model_version.to_string()),
            ];
            if let Some(t) = entry_task {
                pairs.push(("entry_task", t.to_string()));
            }
            d.activity(event_act.clone(), ActivityType::PhaseTransition, at, Some(at), &pairs);
            d.associate(&event_act, actor);
            if let Some(t) = triggering_activity {
                d.rel(RelationKind::WasInformedBy, &event_act, t, None);
            }
            if *entered_via == EnteredVia::LoopBack {
                // The engine emits LoopBack immediately before the re-entry.
                let loop_act = ids::event_activity(inst, event.seq - 1);
                d.rel(RelationKind::WasInformedBy, &event_act, &loop_act, None);
            }
        }
        EventKind::PhaseCompleted { phase_id, iteration, last_activity, actor, closes_instance } => {
            let mut pairs = alloc::vec![
                ("phase", phase_id.to_string()),
                ("iteration", iteration.to_string()),
                ("transition", "completed".to_string()),
            ];
            if let Some(l) = last_activity {
                pairs.push(("last_activity", l.summary.clone()));
            }
            if *closes_instance {
                pairs.push(("closes_instance", "true".into()));
            }
            d.activity(event_act.clone(), ActivityType::PhaseTransition, at, Some(at), &pairs);
            d.associate(&event_act, actor);
            if let Some(l) = last_activity {
                d.rel(RelationKind::WasInformedBy, &event_act, &ids::task_activity(&l.exec_id), None);
            }
        }
        EventKind::TaskStarted { exec_id, phase_id, iteration, task_id, actor } => {
            let act = ids::task_activity(exec_id);
            let pairs =
                [("phase", phase_id.to_string()), ("iteration", iteration.to_string()), ("task", task_id.to_string())];
            d.activity(act.clone(), ActivityType::TaskExecution, at, None, &pairs);
            d.associate(&act, actor);
        }
        EventKind::TaskCompleted { exec_id, outputs, inputs, comment, actor, .. } => {
            let ex = &ctx.state.task_executions[exec_id];
            let act = ids::task_activity(exec_id);
            let mut pairs = task_attrs(ex);
            pairs.push(("outcome", "Completed".into()));
            if let Some(c) = comment {
                pairs.push(("comment", c.clone()));
            }
            d.activity(act.clone(), ActivityType::TaskExecution, ex.started_at, Some(at), &pairs);
            d.associate(&act, actor);
            let agent = d.person(actor);
            for out in outputs {
                let name = out.as_str().rsplit('/').next().unwrap_or_default().to_string();
                d.entity(out.clone(), EntityKind::Artifact, at, &[("name", name), ("task", ex.task_id.to_string())]);
                d.rel(RelationKind::WasGeneratedBy, out, &act, Some(at));
                d.rel(RelationKind::WasAttributedTo, out, &agent, None);
                for input in &ex.inputs {
                    d.rel(RelationKind::WasDerivedFrom, out, input, None);
                }
            }
            for input in inputs {
                d.rel(RelationKind::Used, &act, input, None);
            }
        }
        EventKind::TaskSkipped { exec_id, reason, actor, decision_id, .. } => {
            let ex = &ctx.state.task_executions[exec_id];
            let act = ids::task_activity(exec_id);
            let mut pairs = task_attrs(ex);
            pairs.push(("outcome", "Skipped".into()));
            pairs.push(("reason", reason.clone()));
            d.activity(act.clone(), ActivityType::TaskExecution, ex.started_at, Some(at), &pairs);
            d.associate(&act, actor);
            d.rel(RelationKind::WasInformedBy, &act, &ids::decision_activity(decision_id), None);
        }
        EventKind::AwaitingExternal { exec_id, token, actor } => {
            let ex = &ctx.state.task_executions[exec_id];
            let task_act = ids::task_activity(exec_id);
            let act = ids::dispatch_activity(&token.token_id);
            let request = ids::token_request(&token.token_id);
            let mut pairs = task_attrs(ex);
            pairs.push(("token", token.token_id.to_string()));
            pairs.push(("destination", token.destination.id.to_string()));
            pairs.push(("deadline", token.deadline.to_string()));
            d.activity(act.clone(), ActivityType::TokenDispatch, at, Some(at), &pairs);
            d.entity(
                request.clone(),
                EntityKind::Comment,
                at,
                &[
                    ("token", token.token_id.to_string()),
                    ("text", token.requested_details.text.clone()),
                    ("expected_kind", token.requested_details.expected_kind.clone()),
                ],
            );
            d.rel(RelationKind::WasGeneratedBy, &request, &task_act, Some(at));
            d.rel(RelationKind::Used, &act, &request, None);
            d.rel(RelationKind::WasInformedBy, &act, &task_act, None);
            d.associate(&act, actor);
        }
        EventKind::ExternalReceived { exec_id, token_id, responder, payload, entity_id } => {
            let ex = &ctx.state.task_executions[exec_id];
            let act = ids::receipt_activity(token_id);
            let mut pairs = task_attrs(ex);
            pairs.push(("token", token_id.to_string()));
            pairs.push(("responder", responder.to_string()));
            d.activity(act.clone(), ActivityType::TokenReceipt, at, Some(at), &pairs);
            d.entity(
                entity_id.clone(),
                EntityKind::TokenPayload,
                at,
                &[
                    ("token", token_id.to_string()),
                    ("kind", payload.kind.clone()),
                    ("content", payload.content.clone()),
                ],
            );
            let department =
                ctx.state.tokens.get(token_id).is_some_and(|t| t.destination.kind == StakeholderKind::Department);
            let agent = if responder.is_system() {
                d.agent(responder, AgentType::SoftwareAgent)
            } else if department {
                d.agent(responder, AgentType::Department)
            } else {
                d.agent(responder, AgentType::Person)
            };
            d.rel(RelationKind::WasGeneratedBy, entity_id, &act, Some(at));
            d.rel(RelationKind::WasAttributedTo, entity_id, &agent, None);
            d.rel(RelationKind::WasAssociatedWith, &act, &agent, None);
            d.rel(RelationKind::WasInformedBy, &act, &ids::dispatch_activity(token_id), None);
            d.rel(RelationKind::Used, &ids::task_activity(exec_id), entity_id, None);
        }
        EventKind::DecisionRaised { decision } => {
            let ctx_entity = ids::decision_context(&decision.id);
            let c = &decision.context;
            let mut pairs = alloc::vec![
                ("decision", decision.id.to_string()),
                ("decision_kind", format!("{:?}", decision.kind)),
                ("options", decision.options.join(",")),
            ];
            if let Some(p) = &c.phase_id {
                pairs.push(("phase", p.to_string()));
            }
            if let Some(t) = &c.task_id {
                pairs.push(("task", t.to_string()));
            }
            if let Some(t) = &c.token_id {
                pairs.push(("token", t.to_string()));
            }
            if let Some(r) = &c.reason {
                pairs.push(("reason", r.clone()));
            }
            if let Some(l) = &c.last_activity {
                pairs.push(("last_activity", l.summary.clone()));
            }
            d.entity(ctx_entity.clone(), EntityKind::Comment, decision.raised_at, &pairs);
            if let Some(who) = &c.requested_by {
                let agent = d.person(who);
                d.rel(RelationKind::WasAttributedTo, &ctx_entity, &agent, None);
            }
        }
        EventKind::DecisionResolved { decision_id, choice, decided_by } => {
            let decision = &ctx.state.decisions[decision_id];
            let c = &decision.context;
            let act = ids::decision_activity(decision_id);
            let mut pairs = alloc::vec![
                ("decision_kind", format!("{:?}", decision.kind)),
                ("choice", choice.clone()),
                ("options", decision.options.join(",")),
            ];
            if let Some(p) = &c.phase_id {
                pairs.push(("phase", p.to_string()));
            }
            if let Some(t) = &c.task_id {
                pairs.push(("task", t.to_string()));
            }
            d.activity(act.clone(), ActivityType::Decision, decision.raised_at, Some(at), &pairs);
            d.associate(&act, decided_by);
            d.rel(RelationKind::Used, &act, &ids::decision_context(decision_id), None);
            if let Some(l) = &c.last_activity {
                d.rel(RelationKind::WasInformedBy, &act, &ids::task_activity(&l.exec_id), None);
            }
            if let Some(t) = &c.token_id {
                d.rel(RelationKind::WasInformedBy, &act, &ids::dispatch_activity(t), None);
            }
        }
        EventKind::LoopBack {
            target_phase,
            from_phase,
            iteration,
            triggering_activity,
            reason,
            actor,
            decision_id,
        } => {
            let mut pairs = alloc::vec![
                ("phase", target_phase.to_string()),
                ("iteration", iteration.to_string()),
                ("reason", reason.clone()),
            ];
            if let Some(f) = from_phase {
                pairs.push(("from_phase", f.to_string()));
            }
            d.activity(event_act.clone(), ActivityType::LoopBack, at, Some(at), &pairs);
            d.associate(&event_act, actor);
            d.rel(RelationKind::WasInformedBy, &event_act, triggering_activity, None);
            d.rel(RelationKind::WasInformedBy, &event_act, &ids::decision_activity(decision_id), None);
        }
        EventKind::CommandRejected { .. } => return ProvDocument { header: d.doc.header, ..Default::default() },
    }
    d.doc.normalized()
}
