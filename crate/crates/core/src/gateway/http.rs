use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, GatewayError};

pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Full chat-completions URL.
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: f64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            url: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4.1".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_secs: 120.0,
        }
    }
}

/// Blocking chat-completions client.
pub struct HttpBackend {
    config: HttpConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("url", &self.config.url)
            .field("model", &self.config.model)
            .field("has_key", &self.api_key.is_some())
            .finish()
    }
}

impl HttpBackend {
    /// Reads the API key from `config.api_key_env`; a missing key sends no
    /// authorization header.
    pub fn new(config: HttpConfig) -> Result<Self, GatewayError> {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Self::with_key(config, api_key)
    }

    pub fn with_key(config: HttpConfig, api_key: Option<String>) -> Result<Self, GatewayError> {
        if !(config.timeout_secs.is_finite() && config.timeout_secs > 0.0) {
            return Err(GatewayError::Config(format!("timeout must be positive, got {}", config.timeout_secs)));
        }
        if api_key.is_none() {
            log::warn!("{} is not set; requests go out without authorization", config.api_key_env);
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { config, api_key, agent })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    pub fn request_body(&self, req: &ChatRequest) -> Value {
        json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "temperature": req.temperature,
        })
    }
}

fn is_timeout(e: &ureq::Error) -> bool {
    match e {
        ureq::Error::Timeout(_) => true,
        ureq::Error::Io(io) => matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock),
        _ => false,
    }
}

pub(crate) fn extract_content(body: &str) -> Result<String, GatewayError> {
    let v: Value = serde_json::from_str(body).map_err(|e| GatewayError::Transport {
        status: None,
        message: format!("response is not JSON: {e}"),
    })?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| GatewayError::Transport {
            status: None,
            message: "response has no choices[0].message.content".into(),
        })
}

impl ChatBackend for HttpBackend {
    fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let start = Instant::now();
        let body = self.request_body(req).to_string();
        let mut call = self
            .agent
            .post(&self.config.url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let map_err = |e: ureq::Error| {
            if is_timeout(&e) {
                GatewayError::Timeout { elapsed: start.elapsed() }
            } else {
                GatewayError::Transport {
                    status: None,
                    message: e.to_string(),
                }
            }
        };
        let mut resp = call.send(body.as_str()).map_err(map_err)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(map_err)?;
        if status >= 400 {
            return Err(GatewayError::Transport {
                status: Some(status),
                message: text.chars().take(500).collect(),
            });
        }
        extract_content(&text)
    }

    fn name(&self) -> &str {
        "http"
    }
}
