//! Chat-completion backend over HTTP.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompt::render;
use super::{Resolver, ResolverError, StageRequest};

pub const API_KEY_ENV: &str = "ANOMALOOP_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_s: f64,
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// First backoff delay; doubles on each retry.
    pub backoff_s: f64,
    pub single_flight: bool,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into(),
            model: model.into(),
            temperature: 0.0,
            timeout_s: 60.0,
            max_retries: 3,
            backoff_s: 1.0,
            single_flight: false,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        }
    }

    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        Duration::from_secs_f64(self.backoff_s * f64::from(1u32 << (retry - 1).min(16)))
    }
}

pub struct RemoteResolver {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteResolver {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs_f64(config.timeout_s)).build();
        RemoteResolver { config, agent }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn attempt(&self, body: &Value) -> Result<String, ResolverError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut req = self.agent.post(&url).set("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let response = match req.send_json(body.clone()) {
            Ok(r) => r,
            Err(ureq::Error::Status(code @ (401 | 403), r)) => {
                return Err(ResolverError::Auth(format!("HTTP {code}: {}", r.into_string().unwrap_or_default())))
            }
            Err(ureq::Error::Status(code, _)) if code >= 500 || code == 429 => {
                return Err(ResolverError::Transport(format!("HTTP {code}")))
            }
            Err(ureq::Error::Status(code, r)) => {
                return Err(ResolverError::MalformedResponse(format!(
                    "HTTP {code}: {}",
                    r.into_string().unwrap_or_default()
                )))
            }
            Err(e) => return Err(ResolverError::Transport(e.to_string())),
        };
        let value: Value =
            response.into_json().map_err(|e| ResolverError::MalformedResponse(format!("body is not JSON: {e}")))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ResolverError::MalformedResponse("missing choices[0].message.content".into()))
    }
}

impl Resolver for RemoteResolver {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn single_flight(&self) -> bool {
        self.config.single_flight
    }

    fn respond(&self, request: &StageRequest<'_>) -> Result<String, ResolverError> {
        let prompt = render(request);
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": self.config.temperature,
        });
        let mut retry = 0;
        loop {
            match self.attempt(&body) {
                Err(ResolverError::Transport(last)) => {
                    if retry == self.config.max_retries {
                        return Err(ResolverError::BudgetExceeded { attempts: retry + 1, last });
                    }
                    retry += 1;
                    std::thread::sleep(self.config.backoff(retry));
                }
                other => return other,
            }
        }
    }
}
