#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use bimanual_icl::codec::{BimanualAction, DiscreteAction};
use bimanual_icl::demos::Demonstration;
use bimanual_icl::gateway::{ChatBackend, ChatRequest, GatewayError};
use bimanual_icl::observation::Observation;

#[derive(Debug, Clone)]
pub struct Captured {
    pub method: String,
    pub path: String,
    pub headers: HashMap<String, String>,
    pub body: String,
}

#[derive(Debug, Clone)]
pub struct Reply {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl Reply {
    pub fn content(text: &str) -> Self {
        let body = serde_json::json!({
            "id": "stub",
            "object": "chat.completion",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
        });
        Self {
            status: 200,
            body: body.to_string(),
            delay: Duration::ZERO,
        }
    }
}

/// Loopback HTTP server answering every request with `reply` and keeping
/// a copy of what it received.
pub struct StubServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<Captured>>>,
}

impl StubServer {
    pub fn start(reply: Reply) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let addr = listener.local_addr().expect("local addr");
        let requests = Arc::new(Mutex::new(Vec::new()));
        let sink = requests.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let sink = sink.clone();
                let reply = reply.clone();
                thread::spawn(move || serve(stream, &reply, &sink));
            }
        });
        Self {
            url: format!("http://{addr}/v1/chat/completions"),
            requests,
        }
    }

    pub fn captured(&self) -> Vec<Captured> {
        self.requests.lock().unwrap().clone()
    }
}

fn serve(stream: TcpStream, reply: &Reply, sink: &Mutex<Vec<Captured>>) {
    let mut reader = BufReader::new(stream.try_clone().expect("clone stream"));
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut headers = HashMap::new();
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h).unwrap_or(0) == 0 || h == "\r\n" {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
        }
    }
    let len: usize = headers.get("content-length").and_then(|v| v.parse().ok()).unwrap_or(0);
    let mut body = vec![0u8; len];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    sink.lock().unwrap().push(Captured {
        method,
        path,
        headers,
        body: String::from_utf8_lossy(&body).into_owned(),
    });
    thread::sleep(reply.delay);
    let mut stream = stream;
    let reason = if reply.status < 400 { "OK" } else { "Error" };
    let _ = write!(
        stream,
        "HTTP/1.1 {} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        reply.status,
        reply.body.len(),
        reply.body
    );
    let _ = stream.flush();
}

pub fn act(v: [u8; 3], g: u8) -> DiscreteAction {
    DiscreteAction::new(v, [36, 0, 18], g).unwrap()
}

pub fn bi(r: [u8; 3], rg: u8, l: [u8; 3], lg: u8) -> BimanualAction {
    BimanualAction::new(act(r, rg), DiscreteAction::new(l, [36, 0, 54], lg).unwrap())
}

/// Two hand-written demos of a two-object scene.
pub fn two_demo_fixture() -> Vec<Demonstration> {
    vec![
        Demonstration::new(
            Observation::from_entries([("cube", [66u8, 48, 20]), ("plate", [30, 52, 19])]).unwrap(),
            vec![
                bi([69, 48, 30], 1, [18, 50, 60], 1),
                bi([69, 48, 20], 0, [18, 50, 60], 1),
                bi([53, 48, 40], 0, [40, 48, 40], 1),
            ],
        )
        .unwrap(),
        Demonstration::new(
            Observation::from_entries([("cube", [70u8, 40, 21]), ("plate", [28, 60, 19])]).unwrap(),
            vec![
                bi([73, 40, 31], 1, [18, 50, 60], 1),
                bi([73, 40, 21], 0, [18, 50, 60], 1),
                bi([53, 40, 40], 0, [40, 40, 40], 0),
            ],
        )
        .unwrap(),
    ]
}

pub fn fixture_test_obs() -> Observation {
    Observation::from_entries([("cube", [68u8, 45, 20]), ("plate", [29, 55, 19])]).unwrap()
}

/// Forwards to `inner` and keeps every request it saw.
pub struct Recording {
    pub inner: Arc<dyn ChatBackend>,
    pub seen: Mutex<Vec<ChatRequest>>,
}

impl Recording {
    pub fn new(inner: Arc<dyn ChatBackend>) -> Arc<Self> {
        Arc::new(Self {
            inner,
            seen: Mutex::new(Vec::new()),
        })
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap().clone()
    }

    pub fn by_tag(&self, tag: &str) -> ChatRequest {
        self.requests()
            .into_iter()
            .find(|r| r.tag == tag)
            .unwrap_or_else(|| panic!("no request tagged {tag}"))
    }
}

impl ChatBackend for Recording {
    fn chat(
        &self,
        req: &ChatRequest,
    ) -> Result<String, GatewayError> {
        self.seen.lock().unwrap().push(req.clone());
        self.inner.chat(req)
    }

    fn name(&self) -> &str {
        "recording"
    }
}

pub fn golden_path(name: &str) -> std::path::PathBuf {
    std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

pub fn render_bundle(bundle: &bimanual_icl::prompt::PromptBundle) -> String {
    format!("SYSTEM\n{}\nUSER\n{}\n", bundle.system_text, bundle.user_text)
}

pub fn golden_leader_pred() -> Vec<DiscreteAction> {
    vec![act([71, 45, 30], 1), act([71, 45, 20], 0)]
}

pub fn golden_follower_pred() -> Vec<DiscreteAction> {
    vec![
        DiscreteAction::new([18, 50, 60], [36, 0, 54], 1).unwrap(),
        DiscreteAction::new([38, 45, 40], [36, 0, 54], 0).unwrap(),
    ]
}
