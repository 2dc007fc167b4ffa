use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use super::{ChatBackend, ChatRequest, GatewayError};

/// Answers from fixed tables: first by request fingerprint, then by tag,
/// then a default.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    by_fingerprint: HashMap<String, String>,
    by_tag: HashMap<String, String>,
    default: Option<String>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(response: impl Into<String>) -> Self {
        Self {
            default: Some(response.into()),
            ..Self::default()
        }
    }

    pub fn on_request(mut self, system: &str, user: &str, response: impl Into<String>) -> Self {
        self.by_fingerprint.insert(super::fingerprint(system, user), response.into());
        self
    }

    pub fn on_tag(mut self, tag: impl Into<String>, response: impl Into<String>) -> Self {
        self.by_tag.insert(tag.into(), response.into());
        self
    }

    pub fn or_else(mut self, response: impl Into<String>) -> Self {
        self.default = Some(response.into());
        self
    }
}

impl ChatBackend for ScriptedBackend {
    fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        self.by_fingerprint
            .get(&req.fingerprint())
            .or_else(|| self.by_tag.get(&req.tag))
            .or(self.default.as_ref())
            .cloned()
            .ok_or_else(|| GatewayError::OracleParse(format!("no scripted response for '{}'", req.tag)))
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

/// Returns queued responses in call order; the last one repeats once the
/// queue runs dry.
#[derive(Debug)]
pub struct SequenceBackend {
    queue: Mutex<VecDeque<String>>,
    last: Mutex<Option<String>>,
}

impl SequenceBackend {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            queue: Mutex::new(responses.into_iter().map(Into::into).collect()),
            last: Mutex::new(None),
        }
    }
}

impl ChatBackend for SequenceBackend {
    fn chat(&self, _req: &ChatRequest) -> Result<String, GatewayError> {
        let next = self.queue.lock().unwrap_or_else(|e| e.into_inner()).pop_front();
        let mut last = self.last.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(n) = next {
            *last = Some(n);
        }
        last.clone()
            .ok_or_else(|| GatewayError::OracleParse("empty response sequence".into()))
    }

    fn name(&self) -> &str {
        "sequence"
    }
}

/// Wraps a backend so that the first `failures` attempts of every distinct
/// request (tag and prompt) return unparseable text.
pub struct FlakyBackend {
    inner: Arc<dyn ChatBackend>,
    failures: usize,
    garbage: String,
    tag_filter: Option<String>,
    seen: Mutex<HashMap<(String, String), usize>>,
}

impl std::fmt::Debug for FlakyBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlakyBackend")
            .field("inner", &self.inner.name())
            .field("failures", &self.failures)
            .field("tag_filter", &self.tag_filter)
            .finish()
    }
}

impl FlakyBackend {
    pub fn new(inner: Arc<dyn ChatBackend>, failures: usize) -> Self {
        Self {
            inner,
            failures,
            garbage: "Sorry, I am not sure what the next actions should be.".into(),
            tag_filter: None,
            seen: Mutex::new(HashMap::new()),
        }
    }

    /// Only requests whose tag ends with `suffix` are affected.
    pub fn only_tags_ending_with(mut self, suffix: impl Into<String>) -> Self {
        self.tag_filter = Some(suffix.into());
        self
    }
}

impl ChatBackend for FlakyBackend {
    fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let affected = self.tag_filter.as_ref().is_none_or(|s| req.tag.ends_with(s.as_str()));
        if affected {
            let mut seen = self.seen.lock().unwrap_or_else(|e| e.into_inner());
            let n = seen.entry((req.tag.clone(), req.fingerprint())).or_insert(0);
            *n += 1;
            if *n <= self.failures {
                return Ok(self.garbage.clone());
            }
        }
        self.inner.chat(req)
    }

    fn name(&self) -> &str {
        "flaky"
    }
}
