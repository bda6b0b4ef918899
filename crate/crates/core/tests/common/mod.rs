#![allow(dead_code)]

use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::{json, Value};

use anomaloop::pipeline::oracle::OracleResolver;
use anomaloop::pipeline::{run_pipeline, Stage};
use anomaloop::scenario::{build, warm_up, ScenarioSpec};

pub type Handler = Box<dyn Fn(usize, &Value) -> (u16, String) + Send>;

/// A chat-completion endpoint on a local port that records every request.
pub struct StubServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<Value>>>,
    server: Arc<tiny_http::Server>,
    worker: Option<thread::JoinHandle<()>>,
}

impl StubServer {
    pub fn start(handler: Handler) -> StubServer {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind stub"));
        let port = server.server_addr().to_ip().expect("ip listener").port();
        let requests = Arc::new(Mutex::new(Vec::new()));
        let (srv, log) = (server.clone(), requests.clone());
        let worker = thread::spawn(move || {
            for mut request in srv.incoming_requests() {
                let mut body = String::new();
                request.as_reader().read_to_string(&mut body).ok();
                let value: Value = serde_json::from_str(&body).unwrap_or(Value::Null);
                let n = {
                    let mut log = log.lock().unwrap();
                    log.push(value.clone());
                    log.len() - 1
                };
                let (status, text) = handler(n, &value);
                let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
                request.respond(tiny_http::Response::from_string(text).with_status_code(status).with_header(header)).ok();
            }
        });
        StubServer { url: format!("http://127.0.0.1:{port}"), requests, server, worker: Some(worker) }
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            w.join().ok();
        }
    }
}

pub fn completion(content: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

/// Which stage a request is for, read from its system prompt.
pub fn stage_of(request: &Value) -> Stage {
    let system = request["messages"][0]["content"].as_str().unwrap_or("");
    if system.contains("Classify") {
        Stage::Scene
    } else if system.contains("explain") {
        Stage::Analysis
    } else if system.contains("direct vehicles") {
        Stage::Solution
    } else {
        Stage::Formatting
    }
}

/// The oracle's stage outputs for a scenario's first observation.
pub fn canned_outputs(spec: &ScenarioSpec) -> Vec<String> {
    let (mut world, _) = build(spec).unwrap();
    warm_up(&mut world);
    let out = run_pipeline(&world.observe(), &OracleResolver::default()).unwrap();
    out.traces.into_iter().map(|t| t.output).collect()
}

/// Serve canned stage outputs, answering by stage.
pub fn canned_handler(outputs: Vec<String>) -> Handler {
    Box::new(move |_, req| {
        let idx = Stage::ALL.iter().position(|s| *s == stage_of(req)).unwrap();
        (200, completion(&outputs[idx]))
    })
}
