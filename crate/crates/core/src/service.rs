//! HTTP backends for remote models. Each call POSTs
//! `{"kind", "agent", "prompt"}` and expects an [`AgentOutput`] (support)
//! or a [`PrimaryResponse`] (primary) as JSON.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::agent::{AgentOutput, AgentPrompt, PrimaryBackend, PrimaryResponse, SupportBackend};
use crate::error::BackendError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub endpoint: String,
    pub timeout_ms: u64,
    pub retries: u32,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8088/v1/evaluate".into(),
            timeout_ms: 2000,
            retries: 1,
        }
    }
}

impl ServiceConfig {
    /// Applies `CARELINE_SERVICE_ENDPOINT`, `CARELINE_SERVICE_TIMEOUT_MS` and
    /// `CARELINE_SERVICE_RETRIES` when set.
    pub fn with_env(mut self) -> Self {
        if let Ok(v) = std::env::var("CARELINE_SERVICE_ENDPOINT") {
            self.endpoint = v;
        }
        if let Some(v) = std::env::var("CARELINE_SERVICE_TIMEOUT_MS").ok().and_then(|v| v.parse().ok()) {
            self.timeout_ms = v;
        }
        if let Some(v) = std::env::var("CARELINE_SERVICE_RETRIES").ok().and_then(|v| v.parse().ok()) {
            self.retries = v;
        }
        self
    }
}

#[derive(Clone)]
pub struct ServiceBackend {
    config: ServiceConfig,
    agent: ureq::Agent,
}

impl ServiceBackend {
    pub fn new(config: ServiceConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build();
        Self { config, agent }
    }

    fn post(&self, body: serde_json::Value) -> Result<String, BackendError> {
        let mut last = BackendError::Transport("no attempt made".into());
        for _ in 0..=self.config.retries {
            match self.agent.post(&self.config.endpoint).send_json(body.clone()) {
                Ok(resp) => return resp.into_string().map_err(|e| BackendError::Transport(e.to_string())),
                Err(ureq::Error::Status(code, _)) if code < 500 => {
                    return Err(BackendError::Transport(format!("HTTP {code}")));
                }
                Err(ureq::Error::Status(code, _)) => last = BackendError::Transport(format!("HTTP {code}")),
                Err(ureq::Error::Transport(t)) => {
                    last = if t.kind() == ureq::ErrorKind::Io && t.to_string().contains("timed out") {
                        BackendError::Timeout(self.config.timeout_ms)
                    } else {
                        BackendError::Transport(t.to_string())
                    };
                }
            }
        }
        Err(last)
    }
}

/// Parses and schema-checks a support-agent reply.
pub fn parse_agent_output(body: &str) -> Result<AgentOutput, BackendError> {
    let out: AgentOutput = serde_json::from_str(body).map_err(|e| BackendError::Malformed(e.to_string()))?;
    out.validate()?;
    Ok(out)
}

impl SupportBackend for ServiceBackend {
    fn evaluate(&self, prompt: &AgentPrompt) -> Result<AgentOutput, BackendError> {
        let body = self.post(json!({"kind": "support", "agent": prompt.agent_id, "prompt": prompt.text}))?;
        let out = parse_agent_output(&body)?;
        if out.agent_id != prompt.agent_id {
            return Err(BackendError::Malformed(format!("reply names agent {} instead of {}", out.agent_id, prompt.agent_id)));
        }
        Ok(out)
    }
}

impl PrimaryBackend for ServiceBackend {
    fn respond(&self, prompt: &str) -> Result<PrimaryResponse, BackendError> {
        let body = self.post(json!({"kind": "primary", "agent": "primary", "prompt": prompt}))?;
        serde_json::from_str(&body).map_err(|e| BackendError::Malformed(e.to_string()))
    }
}
