use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::executor::LoopConfig;
use crate::kv::{self, KvError};
use crate::label::AnomalyLabel;
use crate::pipeline::oracle::{ClassifierOnly, OracleResolver};
use crate::pipeline::remote::{RemoteConfig, RemoteResolver};
use crate::pipeline::Resolver;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResolverKind {
    Oracle,
    Remote,
    /// Classifies and declines every later stage; a conformance reference.
    ClassifierOnly,
}

impl std::str::FromStr for ResolverKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(ResolverKind::Oracle),
            "remote" => Ok(ResolverKind::Remote),
            "classifier-only" => Ok(ResolverKind::ClassifierOnly),
            other => Err(format!("unknown resolver `{other}` (expected oracle, remote or classifier-only)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub resolver: ResolverKind,
    pub endpoint: Option<String>,
    pub model: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub backoff_s: f64,
    pub single_flight: bool,
    pub out: PathBuf,
    pub workers: usize,
    pub settle_ticks: u64,
    /// Batch and conformance suite.
    pub kinds: Vec<AnomalyLabel>,
    pub seeds: u64,
    pub repetitions: u32,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            resolver: ResolverKind::Oracle,
            endpoint: None,
            model: "gpt-4o".into(),
            timeout_s: 60.0,
            max_retries: 3,
            backoff_s: 1.0,
            single_flight: false,
            out: PathBuf::from("out"),
            workers: 1,
            settle_ticks: LoopConfig::default().settle_ticks,
            kinds: vec![AnomalyLabel::GhostJam, AnomalyLabel::Deadlock, AnomalyLabel::Accident],
            seeds: 20,
            repetitions: 1,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {error}")]
    Parse { path: String, error: KvError },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn parse_list(line: usize, key: &str, value: &str) -> Result<Vec<AnomalyLabel>, KvError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<AnomalyLabel>().map_err(|e| KvError::new(line, Some(key), e.to_string())))
        .collect()
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, KvError> {
    value.parse().map_err(|_| KvError::new(line, Some(key), format!("expected true or false, found `{value}`")))
}

impl HarnessConfig {
    /// Apply the entries of a config file on top of `self`.
    pub fn merge_text(mut self, text: &str) -> Result<Self, KvError> {
        for e in kv::parse(text)? {
            let (line, key, value) = (e.line, e.key.as_str(), e.value.as_str());
            match key {
                "resolver" => self.resolver = value.parse().map_err(|m: String| KvError::new(line, Some(key), m))?,
                "endpoint" => self.endpoint = Some(value.to_string()),
                "model" => self.model = value.to_string(),
                "timeout_s" => self.timeout_s = kv::parse_f64(&e)?,
                "max_retries" => self.max_retries = kv::parse_u64(&e)? as u32,
                "backoff_s" => self.backoff_s = kv::parse_f64(&e)?,
                "single_flight" => self.single_flight = parse_bool(line, key, value)?,
                "out" => self.out = PathBuf::from(value),
                "workers" => self.workers = kv::parse_u64(&e)?.max(1) as usize,
                "settle_ticks" => self.settle_ticks = kv::parse_u64(&e)?,
                "kinds" => self.kinds = parse_list(line, key, value)?,
                "seeds" => self.seeds = kv::parse_u64(&e)?,
                "repetitions" => self.repetitions = kv::parse_u64(&e)? as u32,
                "api_key" => return Err(KvError::new(line, Some(key), "secrets come from the environment only")),
                other => return Err(KvError::new(line, Some(other), "unknown field")),
            }
        }
        Ok(self)
    }

    pub fn load(self, path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        self.merge_text(&text).map_err(|error| ConfigError::Parse { path: path.display().to_string(), error })
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig { settle_ticks: self.settle_ticks }
    }

    pub fn remote_config(&self) -> Result<RemoteConfig, ConfigError> {
        let endpoint =
            self.endpoint.clone().ok_or_else(|| ConfigError::Invalid("remote resolver needs --endpoint".into()))?;
        let mut cfg = RemoteConfig::new(endpoint, self.model.clone());
        cfg.timeout_s = self.timeout_s;
        cfg.max_retries = self.max_retries;
        cfg.backoff_s = self.backoff_s;
        cfg.single_flight = self.single_flight;
        Ok(cfg)
    }

    pub fn resolver(&self) -> Result<Box<dyn Resolver>, ConfigError> {
        Ok(match self.resolver {
            ResolverKind::Oracle => Box::new(OracleResolver::default()),
            ResolverKind::Remote => Box::new(RemoteResolver::new(self.remote_config()?)),
            ResolverKind::ClassifierOnly => Box::new(ClassifierOnly::default()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_entries_override_defaults() {
        let cfg = HarnessConfig::default()
            .merge_text("resolver = remote\nendpoint = http://127.0.0.1:9\nkinds = deadlock, accident\nseeds = 4\nworkers = 3")
            .unwrap();
        assert_eq!(cfg.resolver, ResolverKind::Remote);
        assert_eq!(cfg.kinds, vec![AnomalyLabel::Deadlock, AnomalyLabel::Accident]);
        assert_eq!((cfg.seeds, cfg.workers), (4, 3));
        assert!(cfg.resolver().is_ok());
    }

    #[test]
    fn secrets_and_unknown_keys_are_rejected() {
        let err = HarnessConfig::default().merge_text("model = x\napi_key = abc").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(HarnessConfig::default().merge_text("colour = red").is_err());
    }

    #[test]
    fn remote_without_endpoint_is_a_config_error() {
        let cfg = HarnessConfig { resolver: ResolverKind::Remote, ..HarnessConfig::default() };
        assert!(matches!(cfg.resolver(), Err(ConfigError::Invalid(_))));
    }
}
