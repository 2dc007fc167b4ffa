//! Chat-call interface over pluggable backends, with parse retries and
//! per-call accounting.

mod http;
mod oracle;
mod scripted;

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::{parse_completion, ParseError, ParsedCompletion};

pub use http::{HttpBackend, HttpConfig, DEFAULT_API_KEY_ENV};
pub use oracle::{ArmNoise, NearestDemoOracle, OracleOptions};
pub use scripted::{FlakyBackend, ScriptedBackend, SequenceBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub temperature: f64,
    /// Free-form label such as `"leader"` or `"cand3/judge"`.
    pub tag: String,
    /// Sampling seed forwarded to backends that use one.
    #[serde(default)]
    pub seed: u64,
}

impl ChatRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>, temperature: f64, tag: impl Into<String>) -> Self {
        Self {
            system: system.into(),
            user: user.into(),
            temperature,
            tag: tag.into(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn prompt_chars(&self) -> usize {
        self.system.chars().count() + self.user.chars().count()
    }

    /// Hex SHA-256 over the system and user texts.
    pub fn fingerprint(&self) -> String {
        fingerprint(&self.system, &self.user)
    }
}

pub fn fingerprint(system: &str, user: &str) -> String {
    let mut h = Sha256::new();
    h.update(system.as_bytes());
    h.update([0u8]);
    h.update(user.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallOutcome {
    Ok,
    ParseFail,
    TransportFail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub tag: String,
    pub prompt_chars: usize,
    pub completion_chars: usize,
    pub wall_ms: u64,
    pub attempt: usize,
    pub outcome: CallOutcome,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Transport { status: Option<u16>, message: String },
    #[error("request timed out after {elapsed:?}")]
    Timeout { elapsed: Duration },
    #[error("'{tag}' produced no valid action list after {} attempts: {last}", records.len())]
    ExhaustedRetries {
        tag: String,
        last: ParseError,
        records: Vec<CallRecord>,
    },
    #[error("oracle cannot answer this prompt: {0}")]
    OracleParse(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
}

/// A chat-completion provider. Implementations must be safe to call from
/// several threads at once.
pub trait ChatBackend: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError>;

    fn name(&self) -> &str;
}

/// Totals over a set of call records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallStats {
    pub calls: usize,
    pub prompt_chars: usize,
    pub completion_chars: usize,
    pub wall_ms: u64,
    pub parse_failures: usize,
    pub transport_failures: usize,
}

impl CallStats {
    pub fn from_records(records: &[CallRecord]) -> Self {
        records.iter().fold(Self::default(), |mut s, r| {
            s.calls += 1;
            s.prompt_chars += r.prompt_chars;
            s.completion_chars += r.completion_chars;
            s.wall_ms += r.wall_ms;
            match r.outcome {
                CallOutcome::Ok => {}
                CallOutcome::ParseFail => s.parse_failures += 1,
                CallOutcome::TransportFail => s.transport_failures += 1,
            }
            s
        })
    }
}

/// Backend handle plus an accounting sink. One gateway per episode keeps
/// the records of concurrent episodes apart.
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    records: Mutex<Vec<CallRecord>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.name())
            .field("calls", &self.call_count())
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            records: Mutex::new(Vec::new()),
        }
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    fn push(&self, record: CallRecord) {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).push(record);
    }

    /// One backend call, recorded as attempt number `attempt`.
    pub fn complete_attempt(&self, req: &ChatRequest, attempt: usize) -> Result<String, GatewayError> {
        let start = Instant::now();
        let result = self.backend.chat(req);
        let wall_ms = start.elapsed().as_millis() as u64;
        let (completion_chars, outcome) = match &result {
            Ok(text) => (text.chars().count(), CallOutcome::Ok),
            Err(_) => (0, CallOutcome::TransportFail),
        };
        self.push(CallRecord {
            tag: req.tag.clone(),
            prompt_chars: req.prompt_chars(),
            completion_chars,
            wall_ms,
            attempt: attempt.max(1),
            outcome,
        });
        if let Err(e) = &result {
            log::debug!("call '{}' attempt {attempt} failed: {e}", req.tag);
        }
        result
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        self.complete_attempt(req, 1)
    }

    /// Flags the most recent record with `tag` as a parse failure.
    pub fn mark_last_parse_failure(&self, tag: &str) {
        let mut records = self.records.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(r) = records.iter_mut().rev().find(|r| r.tag == tag) {
            r.outcome = CallOutcome::ParseFail;
        }
    }

    /// Calls and parses, re-sending the identical request after a parse,
    /// arity or range failure up to `max_retries` times.
    pub fn complete_parsed(
        &self,
        req: &ChatRequest,
        arity: usize,
        max_retries: usize,
    ) -> Result<ParsedCompletion, GatewayError> {
        let mut last = ParseError::ParseFailure;
        for attempt in 1..=max_retries + 1 {
            let text = self.complete_attempt(req, attempt)?;
            match parse_completion(&text, arity) {
                Ok(parsed) => return Ok(parsed),
                Err(e) => {
                    log::debug!("call '{}' attempt {attempt}: {e}", req.tag);
                    self.mark_last_parse_failure(&req.tag);
                    last = e;
                }
            }
        }
        let records = self
            .records()
            .into_iter()
            .filter(|r| r.tag == req.tag)
            .collect();
        Err(GatewayError::ExhaustedRetries {
            tag: req.tag.clone(),
            last,
            records,
        })
    }

    pub fn records(&self) -> Vec<CallRecord> {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn call_count(&self) -> usize {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn stats(&self) -> CallStats {
        CallStats::from_records(&self.records())
    }

    /// Empties the sink, returning the records sorted by tag then attempt.
    pub fn take_records(&self) -> Vec<CallRecord> {
        let mut records = std::mem::take(&mut *self.records.lock().unwrap_or_else(|e| e.into_inner()));
        records.sort_by(|a, b| a.tag.cmp(&b.tag).then(a.attempt.cmp(&b.attempt)));
        records
    }
}
