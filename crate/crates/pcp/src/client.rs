//! Blocking HTTP client for a running `pcp serve`.

use std::time::Duration;

use pcp_core::AgentId;
use serde_json::Value;

use crate::api::{Method, Reply, Request};
use crate::http::{AGENT_HEADER, IDEMPOTENCY_HEADER};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request to {url} failed: {source}")]
    Transport { url: String, source: ureq::Error },
    #[error("{url} answered with non-JSON body: {body}")]
    Body { url: String, body: String },
}

#[derive(Clone)]
pub struct Client {
    base: String,
    agent: ureq::Agent,
}

impl Client {
    pub fn new(base: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        Self { base: base.into().trim_end_matches('/').to_string(), agent }
    }

    pub fn send(
        &self,
        req: &Request,
        actor: Option<&AgentId>,
        idempotency_key: Option<&str>,
    ) -> Result<Reply, ClientError> {
        let (method, path, body) = req.route();
        let url = format!("{}{path}", self.base);
        let transport = |source| ClientError::Transport { url: url.clone(), source };
        let mut response = match method {
            Method::Get => {
                let mut r = self.agent.get(&url);
                if let Some(a) = actor {
                    r = r.header(AGENT_HEADER, a.as_str());
                }
                r.call().map_err(transport)?
            }
            Method::Post => {
                let mut r = self.agent.post(&url);
                if let Some(a) = actor {
                    r = r.header(AGENT_HEADER, a.as_str());
                }
                if let Some(k) = idempotency_key {
                    r = r.header(IDEMPOTENCY_HEADER, k);
                }
                r.send_json(body.unwrap_or(Value::Object(Default::default()))).map_err(transport)?
            }
        };
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(transport)?;
        let body = serde_json::from_str(&text).map_err(|_| ClientError::Body { url: url.clone(), body: text })?;
        Ok(Reply { status, body })
    }
}
