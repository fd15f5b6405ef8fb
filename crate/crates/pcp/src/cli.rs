//! `pcp` command line. Every subcommand that touches state runs either
//! against a log directory directly or, with `--server`, against a running
//! service; both paths produce the same JSON.

use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pcp_core::metamodel::{default_policy_cycle, parse_meta_meta_model, to_json_pretty};
use pcp_core::prov::ActivityType;
use pcp_core::routing::{RequestDetails, ResponsePayload, StakeholderAddress, StakeholderKind};
use pcp_core::{AgentId, Timestamp};
use serde_json::Value;

use crate::api::{self, Reply, Request};
use crate::client::Client;
use crate::http::{self, AppState};
use crate::state::LocalState;

#[derive(Debug, Parser)]
#[command(name = "pcp", version, about = "Policy-cycle workflow engine with provenance capture")]
pub struct Cli {
    /// Base URL of a running `pcp serve`; without it commands use --data-dir.
    #[arg(long, global = true, env = "PCP_SERVER")]
    pub server: Option<String>,
    /// Log directory for local mode.
    #[arg(long, global = true, env = "PCP_DATA_DIR", default_value = "pcp-data")]
    pub data_dir: PathBuf,
    /// Acting agent recorded in events and provenance.
    #[arg(long, global = true, env = "PCP_AGENT", default_value = "cli")]
    pub actor: String,
    /// Idempotency key for the mutating request (server mode).
    #[arg(long, global = true)]
    pub idempotency_key: Option<String>,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "pcp-data")]
        log_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
    #[command(subcommand)]
    Model(ModelCmd),
    #[command(subcommand)]
    Instance(InstanceCmd),
    #[command(subcommand)]
    Decision(DecisionCmd),
    #[command(subcommand)]
    Stakeholder(StakeholderCmd),
    #[command(subcommand)]
    Token(TokenCmd),
    #[command(subcommand)]
    Prov(ProvCmd),
}

#[derive(Debug, Subcommand)]
pub enum ModelCmd {
    /// Check a meta-model document and list every violation.
    Validate {
        file: PathBuf,
    },
    Register {
        file: PathBuf,
    },
    /// Print the built-in five-phase cycle document.
    Default,
    List,
    Show {
        version: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum InstanceCmd {
    Create {
        #[arg(long)]
        version: Option<String>,
    },
    List,
    Show {
        id: String,
    },
    Ready {
        id: String,
    },
    Start {
        id: String,
        task: String,
    },
    Complete {
        id: String,
        task: String,
        /// Artifact name produced by the task (repeatable).
        #[arg(long = "output")]
        outputs: Vec<String>,
        /// Entity id used by the task (repeatable).
        #[arg(long = "input")]
        inputs: Vec<String>,
        #[arg(long)]
        comment: Option<String>,
    },
    Skip {
        id: String,
        task: String,
        #[arg(long)]
        reason: String,
    },
    Transition {
        id: String,
        #[arg(long)]
        target: Option<String>,
    },
    Loopback {
        id: String,
        target: String,
        #[arg(long)]
        reason: String,
    },
    /// Ask the connector to pick the next task.
    NextTask {
        id: String,
    },
    Decisions {
        id: String,
    },
    Events {
        id: String,
        #[arg(long, default_value_t = 1)]
        from: u64,
    },
}

#[derive(Debug, Subcommand)]
pub enum DecisionCmd {
    Resolve { decision: String, choice: String },
}

#[derive(Debug, Subcommand)]
pub enum StakeholderCmd {
    Register {
        #[arg(long)]
        id: String,
        #[arg(long)]
        name: String,
        #[arg(long)]
        department: String,
        #[arg(long)]
        endpoint: String,
        #[arg(long, value_parser = parse_kind, default_value = "consultee")]
        kind: StakeholderKind,
    },
    List,
}

#[derive(Debug, Subcommand)]
pub enum TokenCmd {
    Dispatch {
        instance: String,
        task: String,
        #[arg(long = "to")]
        destination: String,
        #[arg(long)]
        text: String,
        #[arg(long, default_value = "report")]
        expected_kind: String,
        #[arg(long)]
        window_ms: Option<u64>,
    },
    /// Deliver a stakeholder answer. The file holds either a payload
    /// `{"kind", "content"}` or a full response body.
    Respond {
        token_id: String,
        #[arg(long)]
        file: PathBuf,
        /// Responder when the file holds a bare payload (default: --actor).
        #[arg(long)]
        responder: Option<String>,
    },
    /// Expire overdue tokens now.
    Expire,
}

#[derive(Debug, Subcommand)]
pub enum ProvCmd {
    Trail { instance: String },
    Lineage { entity: String },
    Export { instance: String },
    Query(QueryArgs),
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    instance: Option<String>,
    #[arg(long)]
    agent: Option<String>,
    #[arg(long)]
    phase: Option<String>,
    #[arg(long = "type", value_parser = parse_activity_type)]
    activity_type: Option<ActivityType>,
    #[arg(long)]
    from: Option<Timestamp>,
    #[arg(long)]
    to: Option<Timestamp>,
}

fn parse_kind(s: &str) -> Result<StakeholderKind, String> {
    match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
        "department" => Ok(StakeholderKind::Department),
        "consultee" => Ok(StakeholderKind::Consultee),
        "citizenchannel" => Ok(StakeholderKind::CitizenChannel),
        _ => Err(format!("unknown stakeholder kind {s:?} (department, consultee, citizen-channel)")),
    }
}

fn parse_activity_type(s: &str) -> Result<ActivityType, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| format!("unknown activity type {s:?}"))
}

fn read_json(path: &PathBuf) -> Result<Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Outcome of a command: text for stdout, or a message for stderr with the
/// exit code.
type Outcome = Result<String, (i32, String)>;

fn reply_outcome(reply: Reply) -> Outcome {
    if reply.is_success() {
        Ok(reply.text())
    } else {
        Err((1, reply.text()))
    }
}

fn request_for(cmd: Cmd, agent: &AgentId) -> Result<Request, (i32, String)> {
    let usage = |m: String| (2, m);
    Ok(match cmd {
        Cmd::Model(ModelCmd::Register { file }) => Request::RegisterModel(read_json(&file).map_err(usage)?),
        Cmd::Model(ModelCmd::List) => Request::ListModels,
        Cmd::Model(ModelCmd::Show { version }) => Request::GetModel(version.into()),
        Cmd::Instance(c) => match c {
            InstanceCmd::Create { version } => {
                Request::CreateInstance(api::CreateBody { version: version.map(Into::into) })
            }
            InstanceCmd::List => Request::ListInstances,
            InstanceCmd::Show { id } => Request::GetInstance(id.into()),
            InstanceCmd::Ready { id } => Request::ReadyTasks(id.into()),
            InstanceCmd::Start { id, task } => Request::StartTask(id.into(), task.into()),
            InstanceCmd::Complete { id, task, outputs, inputs, comment } => Request::CompleteTask(
                id.into(),
                task.into(),
                api::CompleteBody { outputs, inputs: inputs.into_iter().map(Into::into).collect(), comment },
            ),
            InstanceCmd::Skip { id, task, reason } => {
                Request::SkipTask(id.into(), task.into(), api::SkipBody { reason })
            }
            InstanceCmd::Transition { id, target } => {
                Request::Transition(id.into(), api::TransitionBody { target: target.map(Into::into) })
            }
            InstanceCmd::Loopback { id, target, reason } => {
                Request::LoopBack(id.into(), api::LoopBackBody { target: target.into(), reason })
            }
            InstanceCmd::NextTask { id } => Request::NextTask(id.into()),
            InstanceCmd::Decisions { id } => Request::PendingDecisions(id.into()),
            InstanceCmd::Events { id, from } => Request::Events(id.into(), from),
        },
        Cmd::Decision(DecisionCmd::Resolve { decision, choice }) => {
            Request::ResolveDecision(decision.into(), api::ResolveBody { choice })
        }
        Cmd::Stakeholder(StakeholderCmd::Register { id, name, department, endpoint, kind }) => {
            Request::RegisterStakeholder(StakeholderAddress { id: id.into(), name, department, endpoint, kind })
        }
        Cmd::Stakeholder(StakeholderCmd::List) => Request::ListStakeholders,
        Cmd::Token(TokenCmd::Dispatch { instance, task, destination, text, expected_kind, window_ms }) => {
            Request::DispatchToken(
                instance.into(),
                task.into(),
                api::DispatchBody {
                    destination: destination.into(),
                    details: RequestDetails { text, expected_kind },
                    deadline: None,
                    window_ms,
                },
            )
        }
        Cmd::Token(TokenCmd::Respond { token_id, file, responder }) => {
            let value = read_json(&file).map_err(usage)?;
            let body = if value.get("payload").is_some() {
                serde_json::from_value(value).map_err(|e| usage(format!("{}: {e}", file.display())))?
            } else {
                let payload: ResponsePayload =
                    serde_json::from_value(value).map_err(|e| usage(format!("{}: {e}", file.display())))?;
                api::ResponseBody {
                    token_id: None,
                    responder: responder.map_or_else(|| agent.clone(), AgentId::new),
                    payload,
                    responded_at: None,
                }
            };
            Request::RespondToken(token_id.into(), body)
        }
        Cmd::Token(TokenCmd::Expire) => Request::ExpireTokens,
        Cmd::Prov(c) => match c {
            ProvCmd::Trail { instance } => Request::Trail(instance.into()),
            ProvCmd::Lineage { entity } => Request::Lineage(entity.into()),
            ProvCmd::Export { instance } => Request::Export(instance.into()),
            ProvCmd::Query(q) => Request::Query(api::QueryParams {
                instance: q.instance.map(Into::into),
                agent: q.agent.map(Into::into),
                phase: q.phase.map(Into::into),
                activity_type: q.activity_type,
                from: q.from,
                to: q.to,
            }),
        },
        Cmd::Serve { .. } | Cmd::Model(ModelCmd::Validate { .. } | ModelCmd::Default) => {
            unreachable!("handled before dispatch")
        }
    })
}

fn serve(port: u16, host: std::net::IpAddr, log_dir: PathBuf) -> Outcome {
    let local = LocalState::open(&log_dir).map_err(|e| (1, e.to_string()))?;
    let app = AppState::new(local, http::system_clock());
    let rt = tokio::runtime::Runtime::new().map_err(|e| (1, e.to_string()))?;
    rt.block_on(async move {
        let listener =
            tokio::net::TcpListener::bind(SocketAddr::new(host, port)).await.map_err(|e| (1, e.to_string()))?;
        let addr = listener.local_addr().map_err(|e| (1, e.to_string()))?;
        eprintln!("pcp listening on http://{addr} (logs in {})", log_dir.display());
        http::serve(listener, app, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| (1, e.to_string()))?;
        Ok(String::new())
    })
}

pub fn run(cli: Cli) -> Outcome {
    let agent = AgentId::new(cli.actor.clone());
    match cli.command {
        Cmd::Serve { port, log_dir, host } => return serve(port, host, log_dir),
        Cmd::Model(ModelCmd::Default) => return Ok(format!("{}\n", to_json_pretty(&default_policy_cycle()))),
        Cmd::Model(ModelCmd::Validate { file }) => {
            let text = std::fs::read_to_string(&file).map_err(|e| (2, format!("{}: {e}", file.display())))?;
            return match parse_meta_meta_model(&text) {
                Ok(m) => Ok(format!("{}: valid (version {}, {} phases)\n", file.display(), m.version, m.phases.len())),
                Err(report) => Err((1, format!("{}\n", report))),
            };
        }
        _ => {}
    }
    let request = request_for(cli.command, &agent)?;
    let reply = match &cli.server {
        Some(url) => Client::new(url.clone())
            .send(&request, Some(&agent), cli.idempotency_key.as_deref())
            .map_err(|e| (1, e.to_string()))?,
        None => {
            let mut local = LocalState::open(&cli.data_dir).map_err(|e| (1, e.to_string()))?;
            let now = (http::system_clock())();
            api::handle(&mut local, Some(&agent), &request, now)
        }
    };
    reply_outcome(reply)
}

/// Entry point shared by the binary; returns the process exit code.
pub fn main_with(
    args: impl IntoIterator<Item = std::ffi::OsString>,
    out: &mut impl Write,
    err: &mut impl Write,
) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(text) => {
            let _ = out.write_all(text.as_bytes());
            0
        }
        Err((code, message)) => {
            let _ = writeln!(err, "{}", message.trim_end());
            code
        }
    }
}
