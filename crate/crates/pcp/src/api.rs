//! The service surface as data: every endpoint is a [`Request`] variant,
//! answered by [`handle`] against a [`LocalState`]. The HTTP server, the
//! HTTP client and the local CLI all go through this one mapping.

use pcp_core::engine::EngineError;
use pcp_core::metamodel::{parse_meta_meta_model, to_document};
use pcp_core::prov::{to_prov_json, ActivityType, BundleHeader};
use pcp_core::routing::{RequestDetails, ResponseEnvelope, ResponsePayload, StakeholderAddress};
use pcp_core::runtime::{Command, CommandResult};
use pcp_core::store::ActivityFilter;
use pcp_core::{
    AgentId, DecisionId, InstanceId, NodeId, PhaseId, StakeholderId, TaskId, Timestamp, TokenId, VersionId,
};
use percent_encoding::{utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::state::LocalState;

/// Default answer window for dispatched tokens.
pub const DEFAULT_WINDOW_MS: u64 = 24 * 60 * 60 * 1000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateBody {
    #[serde(default)]
    pub version: Option<VersionId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompleteBody {
    #[serde(default)]
    pub outputs: Vec<String>,
    #[serde(default)]
    pub inputs: Vec<NodeId>,
    #[serde(default)]
    pub comment: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkipBody {
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispatchBody {
    pub destination: StakeholderId,
    pub details: RequestDetails,
    /// Absolute deadline; wins over `window_ms`.
    #[serde(default)]
    pub deadline: Option<Timestamp>,
    #[serde(default)]
    pub window_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionBody {
    #[serde(default)]
    pub target: Option<PhaseId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopBackBody {
    pub target: PhaseId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolveBody {
    pub choice: String,
}

/// A stakeholder answer posted to `/tokens/{id}/response`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseBody {
    /// Must match the path when given.
    #[serde(default)]
    pub token_id: Option<TokenId>,
    pub responder: AgentId,
    pub payload: ResponsePayload,
    #[serde(default)]
    pub responded_at: Option<Timestamp>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<InstanceId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<PhaseId>,
    #[serde(default, rename = "type", skip_serializing_if = "Option::is_none")]
    pub activity_type: Option<ActivityType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<Timestamp>,
}

impl From<QueryParams> for ActivityFilter {
    fn from(q: QueryParams) -> Self {
        ActivityFilter {
            instance: q.instance,
            agent: q.agent,
            phase: q.phase,
            activity_type: q.activity_type,
            from: q.from,
            to: q.to,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Request {
    CreateInstance(CreateBody),
    ListInstances,
    GetInstance(InstanceId),
    ReadyTasks(InstanceId),
    StartTask(InstanceId, TaskId),
    CompleteTask(InstanceId, TaskId, CompleteBody),
    SkipTask(InstanceId, TaskId, SkipBody),
    DispatchToken(InstanceId, TaskId, DispatchBody),
    Transition(InstanceId, TransitionBody),
    LoopBack(InstanceId, LoopBackBody),
    NextTask(InstanceId),
    PendingDecisions(InstanceId),
    ResolveDecision(DecisionId, ResolveBody),
    RespondToken(TokenId, ResponseBody),
    ExpireTokens,
    Events(InstanceId, u64),
    Trail(InstanceId),
    Lineage(NodeId),
    Export(InstanceId),
    Query(QueryParams),
    ListModels,
    GetModel(VersionId),
    RegisterModel(Value),
    ListStakeholders,
    RegisterStakeholder(StakeholderAddress),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

/// Characters left bare in a path segment; everything else, `/` included,
/// is percent-encoded.
const SEGMENT: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_').remove(b'.').remove(b'~').remove(b':');

fn seg(s: &str) -> String {
    utf8_percent_encode(s, SEGMENT).to_string()
}

fn query_string(q: &QueryParams) -> String {
    let Value::Object(map) = serde_json::to_value(q).expect("query params serialise") else { unreachable!() };
    let pairs: Vec<String> = map
        .into_iter()
        .map(|(k, v)| {
            let v = match v {
                Value::String(s) => s,
                other => other.to_string(),
            };
            format!("{k}={}", seg(&v))
        })
        .collect();
    if pairs.is_empty() {
        String::new()
    } else {
        format!("?{}", pairs.join("&"))
    }
}

impl Request {
    pub fn is_mutating(&self) -> bool {
        self.route().0 == Method::Post
    }

    /// Method, path (with query) and JSON body of the endpoint.
    pub fn route(&self) -> (Method, String, Option<Value>) {
        use Method::*;
        match self {
            Self::CreateInstance(b) => (Post, "/instances".into(), Some(to_json(b))),
            Self::ListInstances => (Get, "/instances".into(), None),
            Self::GetInstance(i) => (Get, format!("/instances/{}", seg(i.as_str())), None),
            Self::ReadyTasks(i) => (Get, format!("/instances/{}/tasks/ready", seg(i.as_str())), None),
            Self::StartTask(i, t) => {
                (Post, format!("/instances/{}/tasks/{}/start", seg(i.as_str()), seg(t.as_str())), Some(json!({})))
            }
            Self::CompleteTask(i, t, b) => {
                (Post, format!("/instances/{}/tasks/{}/complete", seg(i.as_str()), seg(t.as_str())), Some(to_json(b)))
            }
            Self::SkipTask(i, t, b) => {
                (Post, format!("/instances/{}/tasks/{}/skip", seg(i.as_str()), seg(t.as_str())), Some(to_json(b)))
            }
            Self::DispatchToken(i, t, b) => {
                (Post, format!("/instances/{}/tasks/{}/dispatch", seg(i.as_str()), seg(t.as_str())), Some(to_json(b)))
            }
            Self::Transition(i, b) => (Post, format!("/instances/{}/transition", seg(i.as_str())), Some(to_json(b))),
            Self::LoopBack(i, b) => (Post, format!("/instances/{}/loopback", seg(i.as_str())), Some(to_json(b))),
            Self::NextTask(i) => (Post, format!("/instances/{}/next-task", seg(i.as_str())), Some(json!({}))),
            Self::PendingDecisions(i) => (Get, format!("/instances/{}/decisions/pending", seg(i.as_str())), None),
            Self::ResolveDecision(d, b) => (Post, format!("/decisions/{}/resolve", seg(d.as_str())), Some(to_json(b))),
            Self::RespondToken(t, b) => (Post, format!("/tokens/{}/response", seg(t.as_str())), Some(to_json(b))),
            Self::ExpireTokens => (Post, "/tokens/expire".into(), Some(json!({}))),
            Self::Events(i, from) => (Get, format!("/instances/{}/events?from={from}", seg(i.as_str())), None),
            Self::Trail(i) => (Get, format!("/prov/instances/{}/trail", seg(i.as_str())), None),
            Self::Lineage(e) => (Get, format!("/prov/entities/{}/lineage", seg(e.as_str())), None),
            Self::Export(i) => (Get, format!("/prov/instances/{}/export", seg(i.as_str())), None),
            Self::Query(q) => (Get, format!("/prov/query{}", query_string(q)), None),
            Self::ListModels => (Get, "/metamodels".into(), None),
            Self::GetModel(v) => (Get, format!("/metamodels/{}", seg(v.as_str())), None),
            Self::RegisterModel(doc) => (Post, "/metamodels".into(), Some(doc.clone())),
            Self::ListStakeholders => (Get, "/stakeholders".into(), None),
            Self::RegisterStakeholder(a) => (Post, "/stakeholders".into(), Some(to_json(a))),
        }
    }
}

/// Status code and JSON body of an answered request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub status: u16,
    pub body: Value,
}

impl Reply {
    pub fn ok(body: Value) -> Self {
        Self { status: 200, body }
    }

    pub fn error(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: json!({ "code": code, "message": message.into() }) }
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        Self::error(422, "malformed", message)
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    /// Pretty JSON text with a trailing newline, as served and as printed
    /// by the CLI.
    pub fn text(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.body).expect("json values serialise");
        s.push('\n');
        s
    }
}

fn engine_error(e: &EngineError) -> Reply {
    Reply::error(e.http_status(), e.code(), e.to_string())
}

fn command_reply(result: CommandResult, created: bool) -> Reply {
    match result {
        Ok(events) => {
            let mut body = json!({ "events": events });
            if created {
                body["instance_id"] = json!(events[0].instance_id);
            }
            Reply { status: if created { 201 } else { 200 }, body }
        }
        Err(e) => {
            let mut r = engine_error(&e.error);
            if let Some(ev) = e.rejection {
                r.body["rejection_seq"] = json!(ev.seq);
            }
            r
        }
    }
}

fn to_json<T: Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("api values serialise")
}

/// Answers one request at time `now`. Mutating requests need an agent id
/// and are journaled before the reply is returned.
pub fn handle(state: &mut LocalState, agent: Option<&AgentId>, req: &Request, now: Timestamp) -> Reply {
    if !req.is_mutating() {
        return query(state, req);
    }
    let Some(actor) = agent.filter(|a| !a.as_str().trim().is_empty()) else {
        return Reply::malformed("mutating requests need a non-empty X-Agent-Id");
    };
    let reply = mutate(state, actor, req, now);
    match state.persist() {
        Ok(()) => reply,
        Err(e) => Reply::error(500, "storage", e.to_string()),
    }
}

fn mutate(state: &mut LocalState, actor: &AgentId, req: &Request, now: Timestamp) -> Reply {
    let command = match req {
        Request::CreateInstance(b) => {
            return command_reply(state.runtime_mut().create_instance(b.version.as_ref(), actor, now), true);
        }
        Request::StartTask(i, t) => Command::StartTask { instance: i.clone(), task: t.clone(), actor: actor.clone() },
        Request::CompleteTask(i, t, b) => Command::CompleteTask {
            instance: i.clone(),
            task: t.clone(),
            outputs: b.outputs.clone(),
            inputs: b.inputs.clone(),
            comment: b.comment.clone(),
            actor: actor.clone(),
        },
        Request::SkipTask(i, t, b) => {
            Command::SkipTask { instance: i.clone(), task: t.clone(), reason: b.reason.clone(), actor: actor.clone() }
        }
        Request::DispatchToken(i, t, b) => Command::DispatchToken {
            instance: i.clone(),
            task: t.clone(),
            destination: b.destination.clone(),
            details: b.details.clone(),
            deadline: b.deadline.unwrap_or_else(|| now.plus_millis(b.window_ms.unwrap_or(DEFAULT_WINDOW_MS))),
            actor: actor.clone(),
        },
        Request::Transition(i, b) => {
            Command::RequestTransition { instance: i.clone(), target: b.target.clone(), actor: actor.clone() }
        }
        Request::LoopBack(i, b) => Command::LoopBack {
            instance: i.clone(),
            target: b.target.clone(),
            reason: b.reason.clone(),
            actor: actor.clone(),
        },
        Request::NextTask(i) => Command::RaiseNextTask { instance: i.clone(), actor: actor.clone() },
        Request::ResolveDecision(d, b) => {
            Command::ResolveDecision { decision: d.clone(), choice: b.choice.clone(), actor: actor.clone() }
        }
        Request::RespondToken(t, b) => {
            if b.token_id.as_ref().is_some_and(|id| id != t) {
                return Reply::malformed("token_id in the body does not match the path");
            }
            let envelope = ResponseEnvelope {
                token_id: t.clone(),
                responder: b.responder.clone(),
                payload: b.payload.clone(),
                responded_at: b.responded_at.unwrap_or(now),
            };
            Command::RespondToken { envelope }
        }
        Request::ExpireTokens => {
            let sweep = state.runtime_mut().expire_tokens(now);
            return Reply::ok(json!({ "decisions": sweep.decisions, "events": sweep.events }));
        }
        Request::RegisterModel(doc) => {
            let model = match parse_meta_meta_model(&doc.to_string()) {
                Ok(m) => m,
                Err(report) => {
                    let violations: Vec<Value> = report
                        .violations
                        .iter()
                        .map(|v| json!({ "code": v.code(), "message": v.to_string() }))
                        .collect();
                    let mut r = Reply::error(422, "invalid-model", report.to_string());
                    r.body["violations"] = Value::Array(violations);
                    return r;
                }
            };
            if state.runtime().models().contains(&model.version) {
                return Reply::error(
                    409,
                    "duplicate-version",
                    format!("version {} is already registered", model.version),
                );
            }
            return match state.register_model(model) {
                Ok(v) => Reply { status: 201, body: json!({ "version": v }) },
                Err(e) => Reply::error(500, "storage", e),
            };
        }
        Request::RegisterStakeholder(addr) => {
            return match state.register_stakeholder(addr.clone()) {
                Ok(()) => Reply { status: 201, body: to_json(addr) },
                Err(e) => Reply::error(409, "duplicate-stakeholder", e),
            };
        }
        _ => unreachable!("read-only requests are answered by query"),
    };
    command_reply(state.runtime_mut().execute(&command, now), false)
}

fn export_header(id: String, instance: Option<InstanceId>) -> BundleHeader {
    BundleHeader { id, instance_id: instance, ..Default::default() }
}

fn query(state: &LocalState, req: &Request) -> Reply {
    let rt = state.runtime();
    let graph = state.store().graph();
    let result: Result<Value, EngineError> = match req {
        Request::ListInstances => {
            let list: Vec<Value> = rt
                .instances()
                .map(|i| json!({ "id": i.state().id, "status": i.state().status, "model_version": i.state().model_version }))
                .collect();
            Ok(json!({ "instances": list }))
        }
        Request::GetInstance(i) => rt.instance_state(i).map(to_json),
        Request::ReadyTasks(i) => rt.ready_tasks(i).map(|r| json!({ "ready": r })),
        Request::PendingDecisions(i) => rt.pending_decisions(i).map(|d| json!({ "decisions": d })),
        Request::Events(i, from) => {
            if *from == 0 {
                return Reply::malformed("from must be at least 1");
            }
            rt.events(i, *from).map(|events| json!({ "events": events, "next": from + events.len() as u64 }))
        }
        Request::Trail(i) => Ok(json!({ "instance_id": i, "trail": graph.audit_trail(i) })),
        Request::Lineage(e) => match graph.lineage(e) {
            Ok(sub) => Ok(to_prov_json(&sub.to_document(export_header(format!("bundle:lineage:{e}"), None)))),
            Err(err) => return Reply::error(404, "unknown-entity", err.to_string()),
        },
        Request::Export(i) => rt.instance_state(i).map(|_| {
            to_prov_json(
                &graph.instance_subgraph(i).to_document(export_header(format!("bundle:export:{i}"), Some(i.clone()))),
            )
        }),
        Request::Query(q) => Ok(json!({ "activities": graph.query(&q.clone().into()) })),
        Request::ListModels => Ok(json!({ "versions": rt.models().versions(), "default": rt.default_version() })),
        Request::GetModel(v) => {
            rt.models().get(v).map(|m| to_document(&m)).ok_or_else(|| EngineError::UnknownVersion(v.clone()))
        }
        Request::ListStakeholders => Ok(json!({ "stakeholders": rt.stakeholders().iter().collect::<Vec<_>>() })),
        _ => unreachable!("mutating requests are answered by mutate"),
    };
    match result {
        Ok(body) => Reply::ok(body),
        Err(e) => engine_error(&e),
    }
}
