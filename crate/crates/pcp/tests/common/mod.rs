#![allow(dead_code)]

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use pcp::api::{self, Reply, Request};
use pcp::client::Client;
use pcp::http::{AppState, Clock, Server};
use pcp::state::LocalState;
use pcp_core::metamodel::default_policy_cycle;
use pcp_core::runtime::Runtime;
use pcp_core::store::ProvStore;
use pcp_core::{AgentId, DecisionId, InstanceId, Timestamp};
use serde_json::Value;
use tempfile::TempDir;

/// Clock that advances one second per reading, starting at 1s.
pub fn tick_clock() -> Clock {
    let n = Arc::new(AtomicU64::new(0));
    Arc::new(move || Timestamp::from_millis((n.fetch_add(1, Ordering::SeqCst) + 1) * 1_000))
}

pub fn open(dir: &TempDir) -> LocalState {
    LocalState::open(dir.path()).unwrap().without_sync()
}

/// Anything that answers API requests: the state directly or a server.
pub trait Api {
    fn call(&mut self, agent: &str, req: Request) -> Reply;
}

pub struct Direct {
    pub state: LocalState,
    pub clock: Clock,
}

impl Direct {
    pub fn new(dir: &TempDir) -> Self {
        Self { state: open(dir), clock: tick_clock() }
    }
}

impl Api for Direct {
    fn call(&mut self, agent: &str, req: Request) -> Reply {
        let now = if req.is_mutating() { (self.clock)() } else { Timestamp::EPOCH };
        api::handle(&mut self.state, Some(&AgentId::new(agent)), &req, now)
    }
}

pub struct Remote {
    pub server: Server,
    pub client: Client,
    pub dir: TempDir,
}

impl Remote {
    pub fn start() -> Self {
        let dir = TempDir::new().unwrap();
        let app = AppState::new(open(&dir), tick_clock());
        let server = Server::spawn(app, "127.0.0.1:0".parse().unwrap()).unwrap();
        let client = Client::new(server.url());
        Self { server, client, dir }
    }
}

impl Api for Remote {
    fn call(&mut self, agent: &str, req: Request) -> Reply {
        self.client.send(&req, Some(&AgentId::new(agent)), None).unwrap()
    }
}

pub fn ok(reply: Reply) -> Value {
    assert!(reply.is_success(), "unexpected failure: {}", reply.text());
    reply.body
}

/// Id of the last decision raised in a command reply.
pub fn raised(reply: &Value) -> DecisionId {
    reply["events"]
        .as_array()
        .unwrap()
        .iter()
        .rev()
        .find(|e| e["type"] == "DecisionRaised")
        .map(|e| DecisionId::new(e["payload"]["decision"]["id"].as_str().unwrap()))
        .expect("a decision was raised")
}

/// One step of a scripted run. `Run` starts and completes a task; `Enter`
/// requests a transition and resolves its entry decision; `LoopBack`
/// requests a loop-back and resolves it with the entry task.
#[derive(Debug, Clone, Copy)]
pub enum Step {
    Run(&'static str, &'static [&'static str]),
    Enter(&'static str, &'static str),
    LoopBack(&'static str, &'static str),
}

/// Five phases, then back to agenda setting for a second iteration.
pub const LOOP_BACK_SCENARIO: &[Step] = &[
    Step::Run("problem_identification", &["problem_statement"]),
    Step::Run("validation", &[]),
    Step::Run("plan_setting", &["agenda_plan"]),
    Step::Enter("analysis", "challenges_opportunities_identification"),
    Step::Run("challenges_opportunities_identification", &["swot"]),
    Step::Run("solution_determination", &["options_paper"]),
    Step::Enter("policy_creation", "formal_consultation"),
    Step::Run("formal_consultation", &[]),
    Step::Run("policy_formulation", &["policy_draft"]),
    Step::Enter("implementation", "regulation_development"),
    Step::Run("regulation_development", &["regulation"]),
    Step::Enter("monitoring_evaluation", "monitoring"),
    Step::Run("monitoring", &["monitoring_report"]),
    Step::Run("evaluation", &["evaluation_report"]),
    Step::LoopBack("agenda_setting", "problem_identification"),
    Step::Run("problem_identification", &["problem_statement_revised"]),
];

pub const LOOP_BACK_REASON: &str = "evaluation found gaps";

/// Plays `steps` through the API on a fresh instance created by alice.
pub fn drive_api(api: &mut impl Api, steps: &[Step]) -> InstanceId {
    let created = ok(api.call("alice", Request::CreateInstance(Default::default())));
    let inst = InstanceId::new(created["instance_id"].as_str().unwrap());
    for step in steps {
        match *step {
            Step::Run(task, outputs) => {
                ok(api.call("alice", Request::StartTask(inst.clone(), task.into())));
                let body = api::CompleteBody {
                    outputs: outputs.iter().map(|s| s.to_string()).collect(),
                    ..Default::default()
                };
                ok(api.call("alice", Request::CompleteTask(inst.clone(), task.into(), body)));
            }
            Step::Enter(phase, entry) => {
                let r = ok(api.call(
                    "alice",
                    Request::Transition(inst.clone(), api::TransitionBody { target: Some(phase.into()) }),
                ));
                ok(api.call("bob", Request::ResolveDecision(raised(&r), api::ResolveBody { choice: entry.into() })));
            }
            Step::LoopBack(phase, entry) => {
                let body = api::LoopBackBody { target: phase.into(), reason: LOOP_BACK_REASON.into() };
                let r = ok(api.call("carol", Request::LoopBack(inst.clone(), body)));
                ok(api.call("carol", Request::ResolveDecision(raised(&r), api::ResolveBody { choice: entry.into() })));
            }
        }
    }
    inst
}

/// The same script against an embedded runtime, with the clock reading
/// once per mutating call like the service does.
pub fn drive_embedded(steps: &[Step]) -> (Runtime<ProvStore>, InstanceId) {
    let clock = tick_clock();
    let mut rt = Runtime::new(ProvStore::new());
    rt.register_model(default_policy_cycle()).unwrap();
    let inst = rt.create_instance(None, &"alice".into(), clock()).unwrap()[0].instance_id.clone();
    let decision = |events: &[pcp_core::engine::EngineEvent]| {
        events
            .iter()
            .rev()
            .find_map(|e| match &e.kind {
                pcp_core::engine::EventKind::DecisionRaised { decision } => Some(decision.id.clone()),
                _ => None,
            })
            .unwrap()
    };
    for step in steps {
        match *step {
            Step::Run(task, outputs) => {
                rt.start_task(&inst, &task.into(), &"alice".into(), clock()).unwrap();
                let outputs: Vec<String> = outputs.iter().map(|s| s.to_string()).collect();
                rt.complete_task_named(&inst, &task.into(), &outputs, &[], None, &"alice".into(), clock()).unwrap();
            }
            Step::Enter(phase, entry) => {
                let events = rt.request_phase_transition(&inst, Some(&phase.into()), &"alice".into(), clock()).unwrap();
                rt.resolve_decision(&decision(&events), entry, &"bob".into(), clock()).unwrap();
            }
            Step::LoopBack(phase, entry) => {
                let events = rt.loop_back(&inst, &phase.into(), &"carol".into(), LOOP_BACK_REASON, clock()).unwrap();
                rt.resolve_decision(&decision(&events), entry, &"carol".into(), clock()).unwrap();
            }
        }
    }
    (rt, inst)
}
