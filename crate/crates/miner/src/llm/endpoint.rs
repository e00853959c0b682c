//! Text-completion endpoints and the on-disk response cache.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::ParseStatus;
use crate::error::{MinerError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndpointConfig {
    /// Model identifier sent to the endpoint.
    pub name: String,
    /// Chat-completions URL for the live client.
    pub url: Option<String>,
    /// Environment variable holding a bearer token.
    pub api_key_env: Option<String>,
    pub temperature: f64,
    pub max_output_tokens: usize,
    pub timeout_seconds: f64,
    pub retries: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            name: "mock".into(),
            url: None,
            api_key_env: None,
            temperature: 0.0,
            max_output_tokens: 1024,
            timeout_seconds: 120.0,
            retries: 3,
        }
    }
}

pub trait Endpoint {
    /// Completion for `prompt`. `doc_id` lets canned endpoints pick a response.
    fn complete(&self, doc_id: &str, prompt: &str) -> Result<String>;
}

/// Canned responses, from memory or from `<dir>/<doc_id>.txt`.
#[derive(Debug, Clone, Default)]
pub struct MockEndpoint {
    responses: HashMap<String, String>,
    dir: Option<PathBuf>,
    /// Artificial delay per call.
    pub latency: Duration,
}

impl MockEndpoint {
    pub fn from_map(responses: HashMap<String, String>) -> Self {
        MockEndpoint {
            responses,
            ..MockEndpoint::default()
        }
    }

    pub fn from_dir(dir: impl Into<PathBuf>) -> Self {
        MockEndpoint {
            dir: Some(dir.into()),
            ..MockEndpoint::default()
        }
    }
}

impl Endpoint for MockEndpoint {
    fn complete(&self, doc_id: &str, _prompt: &str) -> Result<String> {
        if !self.latency.is_zero() {
            thread::sleep(self.latency);
        }
        if let Some(r) = self.responses.get(doc_id) {
            return Ok(r.clone());
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{doc_id}.txt"));
            if path.exists() {
                return std::fs::read_to_string(&path).map_err(|e| MinerError::io(path, e));
            }
        }
        Err(MinerError::Endpoint(format!("mock has no response for `{doc_id}`")))
    }
}

/// OpenAI-style chat-completions client with exponential backoff.
pub struct HttpEndpoint {
    config: EndpointConfig,
    agent: ureq::Agent,
}

impl HttpEndpoint {
    pub fn new(config: EndpointConfig) -> Result<Self> {
        if config.url.is_none() {
            return Err(MinerError::Config("live endpoint needs a url".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_seconds)))
            .build()
            .into();
        Ok(HttpEndpoint { config, agent })
    }

    fn once(&self, prompt: &str) -> std::result::Result<String, String> {
        let url = self.config.url.as_deref().expect("checked in new");
        let body = json!({
            "model": self.config.name,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.agent.post(url);
        if let Some(var) = &self.config.api_key_env {
            let key = std::env::var(var).map_err(|_| format!("environment variable {var} not set"))?;
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        let v: Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| "response has no choices[0].message.content".to_string())
    }
}

impl Endpoint for HttpEndpoint {
    fn complete(&self, doc_id: &str, prompt: &str) -> Result<String> {
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            match self.once(prompt) {
                Ok(s) => return Ok(s),
                Err(e) => {
                    log::warn!("{doc_id}: attempt {} failed: {e}", attempt + 1);
                    last = e;
                    if attempt < self.config.retries {
                        thread::sleep(Duration::from_millis(500 << attempt.min(6)));
                    }
                }
            }
        }
        Err(MinerError::Endpoint(format!("{doc_id}: {last}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub doc_id: String,
    pub raw: String,
    pub parse_status: ParseStatus,
    /// Latency of the original request.
    pub wall_seconds: f64,
}

/// `<root>/<spec-hash>/<doc_id>.json`.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ResponseCache { root: root.into() }
    }

    pub fn path(&self, spec_hash: &str, doc_id: &str) -> PathBuf {
        self.root.join(spec_hash).join(format!("{doc_id}.json"))
    }

    pub fn get(&self, spec_hash: &str, doc_id: &str) -> Result<Option<CachedResponse>> {
        let path = self.path(spec_hash, doc_id);
        if !path.exists() {
            return Ok(None);
        }
        let raw = std::fs::read_to_string(&path).map_err(|e| MinerError::io(&path, e))?;
        Ok(Some(serde_json::from_str(&raw)?))
    }

    pub fn put(&self, spec_hash: &str, entry: &CachedResponse) -> Result<()> {
        let path = self.path(spec_hash, &entry.doc_id);
        let dir = path.parent().expect("cache path has a parent");
        std::fs::create_dir_all(dir).map_err(|e| MinerError::io(dir, e))?;
        write_atomic(&path, serde_json::to_string_pretty(entry)?.as_bytes())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| MinerError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| MinerError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_from_dir_and_map() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "{}").unwrap();
        assert_eq!(MockEndpoint::from_dir(dir.path()).complete("a", "").unwrap(), "{}");
        assert!(MockEndpoint::from_dir(dir.path()).complete("b", "").is_err());
        let m = MockEndpoint::from_map(HashMap::from([("x".to_string(), "r".to_string())]));
        assert_eq!(m.complete("x", "p").unwrap(), "r");
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = ResponseCache::new(dir.path());
        assert!(c.get("h", "d").unwrap().is_none());
        let e = CachedResponse {
            doc_id: "d".into(),
            raw: "{}".into(),
            parse_status: ParseStatus::Clean,
            wall_seconds: 1.5,
        };
        c.put("h", &e).unwrap();
        assert_eq!(c.get("h", "d").unwrap(), Some(e));
        assert!(dir.path().join("h").join("d.json").exists());
    }

    #[test]
    fn live_endpoint_requires_url() {
        assert!(HttpEndpoint::new(EndpointConfig::default()).is_err());
    }

    #[test]
    fn unreachable_endpoint_errors_after_retries() {
        let e = HttpEndpoint::new(EndpointConfig {
            url: Some("http://127.0.0.1:9/v1/chat/completions".into()),
            retries: 0,
            timeout_seconds: 2.0,
            ..EndpointConfig::default()
        })
        .unwrap();
        assert!(matches!(e.complete("d", "p"), Err(MinerError::Endpoint(_))));
    }
}
