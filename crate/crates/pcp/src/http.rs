//! HTTP face of [`api`](crate::api): axum routes that translate requests
//! into [`Request`] values and replies into JSON responses.
//!
//! All commands go through one mutex, so commands addressed to an instance
//! apply in a single order and each reply reflects the state right after
//! its command.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, RawQuery, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use pcp_core::{AgentId, Timestamp};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

use crate::api::{self, Reply, Request};
use crate::state::LocalState;

pub const AGENT_HEADER: &str = "x-agent-id";
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

/// Source of command timestamps.
pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        let ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        Timestamp::from_millis(ms)
    })
}

struct Inner {
    local: LocalState,
    replies: HashMap<String, Reply>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Mutex<Inner>>,
    clock: Clock,
}

impl AppState {
    pub fn new(local: LocalState, clock: Clock) -> Self {
        Self { inner: Arc::new(Mutex::new(Inner { local, replies: HashMap::new() })), clock }
    }

    /// Runs `f` on the underlying state under the command lock.
    pub fn with_local<T>(&self, f: impl FnOnce(&mut LocalState) -> T) -> T {
        f(&mut self.inner.lock().unwrap_or_else(|p| p.into_inner()).local)
    }

    fn answer(&self, headers: &HeaderMap, req: Request) -> Reply {
        let header = |name: &str| headers.get(name).and_then(|v| v.to_str().ok()).map(str::to_string);
        let agent = header(AGENT_HEADER).map(AgentId::new);
        let mut inner = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        if !req.is_mutating() {
            return api::handle(&mut inner.local, agent.as_ref(), &req, Timestamp::EPOCH);
        }
        let key = header(IDEMPOTENCY_HEADER).map(|k| {
            let (_, path, _) = req.route();
            format!("{}\n{path}\n{k}", agent.as_ref().map_or("", |a| a.as_str()))
        });
        if let Some(reply) = key.as_ref().and_then(|k| inner.replies.get(k)) {
            return reply.clone();
        }
        let reply = api::handle(&mut inner.local, agent.as_ref(), &req, (self.clock)());
        if let Some(k) = key {
            if reply.status < 500 {
                inner.replies.insert(k, reply.clone());
            }
        }
        reply
    }
}

fn respond(reply: Reply) -> Response {
    let status = StatusCode::from_u16(reply.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(header::CONTENT_TYPE, "application/json")], reply.text()).into_response()
}

fn parse<T: DeserializeOwned + Default>(body: &Bytes) -> Result<T, Reply> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| Reply::malformed(format!("invalid request body: {e}")))
}

fn parse_required<T: DeserializeOwned>(body: &Bytes) -> Result<T, Reply> {
    serde_json::from_slice(body).map_err(|e| Reply::malformed(format!("invalid request body: {e}")))
}

fn run(app: &AppState, headers: &HeaderMap, req: Result<Request, Reply>) -> Response {
    respond(match req {
        Ok(req) => app.answer(headers, req),
        Err(reply) => reply,
    })
}

#[derive(Deserialize)]
struct FromParam {
    from: Option<u64>,
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route(
            "/instances",
            get(|State(a): State<AppState>, h: HeaderMap| async move { run(&a, &h, Ok(Request::ListInstances)) }).post(
                |State(a): State<AppState>, h: HeaderMap, body: Bytes| async move {
                    run(&a, &h, parse(&body).map(Request::CreateInstance))
                },
            ),
        )
        .route(
            "/instances/{id}",
            get(|State(a): State<AppState>, h: HeaderMap, Path(id): Path<String>| async move {
                run(&a, &h, Ok(Request::GetInstance(id.into())))
            }),
        )
        .route(
            "/instances/{id}/tasks/ready",
            get(|State(a): State<AppState>, h: HeaderMap, Path(id): Path<String>| async move {
                run(&a, &h, Ok(Request::ReadyTasks(id.into())))
            }),
        )
        .route(
            "/instances/{id}/tasks/{task}/{action}",
            post(|State(a): State<AppState>, h: HeaderMap, Path((id, task, action)): Path<(String, String, String)>, body: Bytes| async move {
                let (i, t) = (id.into(), task.into());
                let req = match action.as_str() {
                    "start" => Ok(Request::StartTask(i, t)),
                    "complete" => parse(&body).map(|b| Request::CompleteTask(i, t, b)),
                    "skip" => parse_required(&body).map(|b| Request::SkipTask(i, t, b)),
                    "dispatch" => parse_required(&body).map(|b| Request::DispatchToken(i, t, b)),
                    other => Err(Reply::error(404, "not-found", format!("no task action {other:?}"))),
                };
                run(&a, &h, req)
            }),
        )
        .route(
            "/instances/{id}/transition",
            post(|State(a): State<AppState>, h: HeaderMap, Path(id): Path<String>, body: Bytes| async move {
                run(&a, &h, parse(&body).map(|b| Request::Transition(id.into(), b)))
            }),
        )
        .route(
            "/instances/{id}/loopback",
            post(|State(a): State<AppState>, h: HeaderMap, Path(id): Path<String>, body: Bytes| async move {
                run(&a, &h, parse_required(&body).map(|b| Request::LoopBack(id.into(), b)))
            }),
        )
        .route(
            "/instances/{id}/next-task",
            post(|State(a): State<AppState>, h: HeaderMap, Path(id): Path<String>| async move {
                run(&a, &h, Ok(Request::NextTask(id.into())))
            }),
        )
        .route(
            "/instances/{id}/decisions/pending",
            get(|State(a): State<AppState>, h: HeaderMap, Path(id): Path<String>| async move {
                run(&a, &h, Ok(Request::PendingDecisions(id.into())))
            }),
        )
        .route(
            "/instances/{id}/events",
            get(|State(a): State<AppState>, h: HeaderMap, Path(id): Path<String>, q: Result<Query<FromParam>, _>| async move {
                let req = match q {
                    Ok(Query(p)) => Ok(Request::Events(id.into(), p.from.unwrap_or(1))),
                    Err(e) => Err(Reply::malformed(format!("{e}"))),
                };
                run(&a, &h, req)
            }),
        )
        .route(
            "/decisions/{id}/resolve",
            post(|State(a): State<AppState>, h: HeaderMap, Path(id): Path<String>, body: Bytes| async move {
                run(&a, &h, parse_required(&body).map(|b| Request::ResolveDecision(id.into(), b)))
            }),
        )
        .route(
            "/tokens/expire",
            post(|State(a): State<AppState>, h: HeaderMap| async move { run(&a, &h, Ok(Request::ExpireTokens)) }),
        )
        .route(
            "/tokens/{id}/response",
            post(|State(a): State<AppState>, h: HeaderMap, Path(id): Path<String>, body: Bytes| async move {
                run(&a, &h, parse_required(&body).map(|b| Request::RespondToken(id.into(), b)))
            }),
        )
        .route(
            "/prov/instances/{id}/trail",
            get(|State(a): State<AppState>, h: HeaderMap, Path(id): Path<String>| async move {
                run(&a, &h, Ok(Request::Trail(id.into())))
            }),
        )
        .route(
            "/prov/instances/{id}/export",
            get(|State(a): State<AppState>, h: HeaderMap, Path(id): Path<String>| async move {
                run(&a, &h, Ok(Request::Export(id.into())))
            }),
        )
        .route(
            "/prov/entities/{id}/lineage",
            get(|State(a): State<AppState>, h: HeaderMap, Path(id): Path<String>| async move {
                run(&a, &h, Ok(Request::Lineage(id.into())))
            }),
        )
        .route(
            "/prov/query",
            get(|State(a): State<AppState>, h: HeaderMap, RawQuery(q): RawQuery| async move {
                let req = serde_urlencoded_query(q.as_deref().unwrap_or("")).map(Request::Query);
                run(&a, &h, req)
            }),
        )
        .route(
            "/metamodels",
            get(|State(a): State<AppState>, h: HeaderMap| async move { run(&a, &h, Ok(Request::ListModels)) }).post(
                |State(a): State<AppState>, h: HeaderMap, body: Bytes| async move {
                    run(&a, &h, parse_required(&body).map(Request::RegisterModel))
                },
            ),
        )
        .route(
            "/metamodels/{version}",
            get(|State(a): State<AppState>, h: HeaderMap, Path(v): Path<String>| async move {
                run(&a, &h, Ok(Request::GetModel(v.into())))
            }),
        )
        .route(
            "/stakeholders",
            get(|State(a): State<AppState>, h: HeaderMap| async move { run(&a, &h, Ok(Request::ListStakeholders)) }).post(
                |State(a): State<AppState>, h: HeaderMap, body: Bytes| async move {
                    run(&a, &h, parse_required(&body).map(Request::RegisterStakeholder))
                },
            ),
        )
        .fallback(|| async { respond(Reply::error(404, "not-found", "no such endpoint")) })
        .with_state(app)
}

fn serde_urlencoded_query(q: &str) -> Result<api::QueryParams, Reply> {
    let parsed: Result<Query<api::QueryParams>, _> =
        Query::try_from_uri(&format!("/?{q}").parse().map_err(|_| Reply::malformed("bad query"))?);
    parsed.map(|Query(p)| p).map_err(|e| Reply::malformed(format!("{e}")))
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    app: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(app)).with_graceful_shutdown(shutdown).await
}

/// A server on its own thread and runtime; stops when dropped.
pub struct Server {
    pub addr: SocketAddr,
    pub app: AppState,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl Server {
    pub fn spawn(app: AppState, addr: SocketAddr) -> std::io::Result<Self> {
        let std_listener = std::net::TcpListener::bind(addr)?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (stop, stopped) = oneshot::channel::<()>();
        let served = app.clone();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build()?;
            rt.block_on(async move {
                let listener = TcpListener::from_std(std_listener)?;
                serve(listener, served, async {
                    let _ = stopped.await;
                })
                .await
            })
        });
        Ok(Self { addr, app, stop: Some(stop), thread: Some(thread) })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) -> std::io::Result<()> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> std::io::Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}
