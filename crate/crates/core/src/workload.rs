//! Seeded workload generation: random cycle models and random command
//! streams against a running instance. Used for soak runs and property
//! checks; every choice comes from the caller's RNG.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::engine::TaskState;
use crate::ids::{AgentId, InstanceId, PhaseId, TokenId};
use crate::metamodel::{canonical_schema, MetaMetaModel, PhaseMetaModel, PhaseOrderConstraint, TaskDef};
use crate::routing::sim::unit_f64;
use crate::routing::{RequestDetails, ResponseEnvelope, ResponsePayload, TokenState};
use crate::runtime::{Command, Recorder, Runtime};
use crate::time::Timestamp;

pub const AGENTS: [&str; 3] = ["alice", "bob", "carol"];

fn below(rng: &mut impl RngCore, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

fn chance(rng: &mut impl RngCore, p: f64) -> bool {
    unit_f64(rng) < p
}

fn pick<'a, T>(rng: &mut impl RngCore, items: &'a [T]) -> Option<&'a T> {
    if items.is_empty() {
        None
    } else {
        Some(&items[below(rng, items.len())])
    }
}

/// A valid model with 1..=`max_phases` phases of 1..=`max_tasks` tasks each.
/// Precedence edges only point to earlier-declared tasks, so the first task
/// of every phase is an entry point.
pub fn random_model(rng: &mut impl RngCore, version: &str, max_phases: usize, max_tasks: usize) -> MetaMetaModel {
    let n_phases = 1 + below(rng, max_phases.max(1));
    let mut phases = Vec::with_capacity(n_phases);
    for p in 0..n_phases {
        let n_tasks = 1 + below(rng, max_tasks.max(1));
        let mut tasks = Vec::with_capacity(n_tasks);
        for t in 0..n_tasks {
            let preds: Vec<String> = (0..t).filter(|_| chance(rng, 0.3)).map(|i| format!("p{p}t{i}")).collect();
            tasks.push(
                TaskDef::new(format!("p{p}t{t}"), format!("Task {t} of phase {p}"))
                    .after(preds)
                    .mandatory(chance(rng, 0.2))
                    .consultable(chance(rng, 0.4)),
            );
        }
        phases.push(PhaseMetaModel {
            id: format!("phase{p}").into(),
            name: format!("Phase {p}"),
            ordinal: p as i64 + 1,
            tasks,
            entry_decision_required: chance(rng, 0.5),
        });
    }
    let mut phase_constraints = Vec::new();
    for k in 1..n_phases {
        if chance(rng, 0.3) {
            let j = below(rng, k);
            phase_constraints.push(PhaseOrderConstraint {
                subject: format!("phase{k}").into(),
                requires: format!("phase{j}").into(),
            });
        }
    }
    MetaMetaModel { version: version.into(), phases, phase_constraints, schema: canonical_schema() }
}

/// A plausible next command for `instance`: mostly valid, sometimes not.
pub fn random_command<R: Recorder>(
    rt: &Runtime<R>,
    rng: &mut impl RngCore,
    instance: &InstanceId,
    now: Timestamp,
) -> Command {
    let actor = AgentId::new(AGENTS[below(rng, AGENTS.len())]);
    let Some(inst) = rt.instance(instance) else {
        return Command::CreateInstance { version: None, actor };
    };
    let state = inst.state();
    let model = inst.model();
    let active = state.active_phase().map(|p| p.phase_id.clone());
    let phase_tasks: Vec<_> = active
        .as_ref()
        .and_then(|p| model.phase(p))
        .map(|p| p.tasks.iter().map(|t| t.id.clone()).collect())
        .unwrap_or_default();
    let ready: Vec<_> = inst.ready_tasks().into_iter().collect();
    let running: Vec<_> = active
        .as_ref()
        .map(|p| {
            state
                .executions_in(p, state.active_phase().map_or(0, |a| a.iteration))
                .filter(|e| !e.state.is_terminal())
                .map(|e| (e.task_id.clone(), e.state))
                .collect()
        })
        .unwrap_or_default();
    let pending: Vec<_> = state.pending_decisions().cloned().collect();
    let phase_ids: Vec<PhaseId> = model.phases.iter().map(|p| p.id.clone()).collect();
    let entities: Vec<_> = state.entities.iter().cloned().collect();

    if !pending.is_empty() && chance(rng, 0.5) {
        let d = pick(rng, &pending).expect("non-empty");
        let choice = if chance(rng, 0.05) {
            String::from("not-an-option")
        } else {
            pick(rng, &d.options).cloned().unwrap_or_default()
        };
        return Command::ResolveDecision { decision: d.id.clone(), choice, actor };
    }
    match below(rng, 20) {
        0..=4 => {
            let task = if chance(rng, 0.8) { pick(rng, &ready) } else { pick(rng, &phase_tasks) };
            match task {
                Some(task) => Command::StartTask { instance: instance.clone(), task: task.clone(), actor },
                None => Command::RequestTransition { instance: instance.clone(), target: None, actor },
            }
        }
        5..=9 => match pick(rng, &running) {
            Some((task, _)) => {
                let outputs = if chance(rng, 0.6) { vec![format!("doc{}", state.last_seq)] } else { Vec::new() };
                let inputs = match pick(rng, &entities) {
                    Some(e) if chance(rng, 0.5) => vec![e.clone()],
                    _ => Vec::new(),
                };
                Command::CompleteTask {
                    instance: instance.clone(),
                    task: task.clone(),
                    outputs,
                    inputs,
                    comment: None,
                    actor,
                }
            }
            None => Command::RaiseNextTask { instance: instance.clone(), actor },
        },
        10 | 11 => match pick(rng, &phase_tasks) {
            Some(task) => {
                Command::SkipTask { instance: instance.clone(), task: task.clone(), reason: "not needed".into(), actor }
            }
            None => Command::RaiseNextTask { instance: instance.clone(), actor },
        },
        12..=14 => {
            let target = if chance(rng, 0.6) { None } else { pick(rng, &phase_ids).cloned() };
            Command::RequestTransition { instance: instance.clone(), target, actor }
        }
        15 => {
            let target = pick(rng, &phase_ids).cloned().expect("models have phases");
            Command::LoopBack { instance: instance.clone(), target, reason: "revisit".into(), actor }
        }
        16 => Command::RaiseNextTask { instance: instance.clone(), actor },
        17 => {
            let destinations: Vec<_> = rt.stakeholders().iter().map(|s| s.id.clone()).collect();
            let in_progress: Vec<_> =
                running.iter().filter(|(_, s)| *s == TaskState::InProgress).map(|(t, _)| t.clone()).collect();
            match (pick(rng, &in_progress), pick(rng, &destinations)) {
                (Some(task), Some(dest)) => Command::DispatchToken {
                    instance: instance.clone(),
                    task: task.clone(),
                    destination: dest.clone(),
                    details: RequestDetails { text: "please advise".into(), expected_kind: "report".into() },
                    deadline: now.plus_millis(5_000),
                    actor,
                },
                _ => Command::ExpireTokens,
            }
        }
        18 => {
            let outstanding: Vec<TokenId> = state
                .tokens
                .values()
                .filter(|t| chance(rng, 0.8) || t.state == TokenState::Dispatched)
                .map(|t| t.token_id.clone())
                .collect();
            let token_id = match pick(rng, &outstanding) {
                Some(t) if chance(rng, 0.9) => t.clone(),
                _ => TokenId::new(format!("{instance}/t999")),
            };
            Command::RespondToken {
                envelope: ResponseEnvelope {
                    token_id,
                    responder: "consultee".into(),
                    payload: ResponsePayload { kind: "report".into(), content: "findings".into() },
                    responded_at: now,
                },
            }
        }
        _ => Command::ExpireTokens,
    }
}
