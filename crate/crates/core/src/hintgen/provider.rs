use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("provider timed out")]
    Timeout,
    #[error("provider transport error: {0}")]
    Transport(String),
    #[error("provider returned status {0}")]
    Status(u16),
    #[error("auth token variable {0} is not set")]
    MissingToken(String),
}

/// Single text-in/text-out generation call.
pub trait HintProvider: Send + Sync {
    fn generate(&self, system_prompt: &str, window_text: &str) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpProviderConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: Option<String>,
    pub timeout_ms: u64,
}

impl Default for HttpProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8080/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            token_env: Some("CONVASSIST_PROVIDER_TOKEN".into()),
            timeout_ms: 10_000,
        }
    }
}

/// Chat-completions style HTTP adapter.
///
/// Sends `{model, messages: [system, user]}` and reads
/// `choices[0].message.content`, falling back to a top-level `text` field or
/// the raw body.
pub struct HttpProvider {
    cfg: HttpProviderConfig,
    agent: ureq::Agent,
}

const OUTPUT_FORMAT_NOTE: &str =
    "Answer as a line 'Keywords: k1, k2' followed by one '- ' bullet line per item.";

impl HttpProvider {
    pub fn new(cfg: HttpProviderConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { cfg, agent }
    }

    fn token(&self) -> Result<Option<String>, ProviderError> {
        match &self.cfg.token_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ProviderError::MissingToken(var.clone())),
        }
    }

    pub fn extract_text(body: &str) -> String {
        match serde_json::from_str::<Value>(body) {
            Ok(v) => {
                if let Some(s) = v
                    .pointer("/choices/0/message/content")
                    .and_then(Value::as_str)
                {
                    return s.to_string();
                }
                if let Some(s) = v.get("text").and_then(Value::as_str) {
                    return s.to_string();
                }
                body.to_string()
            }
            Err(_) => body.to_string(),
        }
    }
}

impl HintProvider for HttpProvider {
    fn generate(&self, system_prompt: &str, window_text: &str) -> Result<String, ProviderError> {
        let token = self.token()?;
        let body = json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": system_prompt},
                {"role": "user", "content": format!("{window_text}\n\n{OUTPUT_FORMAT_NOTE}")},
            ],
        });
        let mut req = self.agent.post(&self.cfg.endpoint);
        if let Some(t) = token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(&body).map_err(map_err)?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(ProviderError::Status(status));
        }
        let text = resp.body_mut().read_to_string().map_err(map_err)?;
        Ok(Self::extract_text(&text))
    }
}

fn map_err(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::Timeout(_) => ProviderError::Timeout,
        other => ProviderError::Transport(other.to_string()),
    }
}
