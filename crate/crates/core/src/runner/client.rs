use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::Language;

use super::ClientError;

/// One completion call: a single sample of a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest<'a> {
    pub tweet_id: &'a str,
    pub language: Language,
    pub body: &'a str,
    pub temperature: f64,
    pub sample_index: usize,
    pub seed: Option<u64>,
}

pub trait ChatClient: Send + Sync {
    fn model_id(&self) -> &str;
    /// Upper bound on concurrent requests the runner may issue.
    fn max_in_flight(&self) -> usize {
        1
    }
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ClientError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    pub endpoint: String,
    pub model_id: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    /// Name of the environment variable holding the API key. Keys never
    /// appear in config files.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_in_flight() -> usize {
    4
}
fn default_backoff() -> u64 {
    500
}

impl ClientConfig {
    pub fn new(endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            max_in_flight: default_in_flight(),
            api_key_env: None,
            backoff_ms: default_backoff(),
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.max_in_flight == 0 {
            return Err(ClientError::Config("max_in_flight must be at least 1".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(ClientError::Config("timeout_secs must be positive".into()));
        }
        Ok(())
    }
}

/// Chat-completion client over HTTP. One sample per request.
#[derive(Debug)]
pub struct HttpClient {
    config: ClientConfig,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

enum Attempt {
    Done(String),
    Retry(ClientError),
    Fail(ClientError),
}

impl HttpClient {
    pub fn new(config: ClientConfig) -> Result<Self, ClientError> {
        config.validate()?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| ClientError::MissingCredential(var.clone()))?),
            None => None,
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        Ok(Self { config, api_key, http })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    fn attempt(&self, payload: &serde_json::Value) -> Attempt {
        let mut req = self.http.post(&self.config.endpoint).json(payload);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(ClientError::Timeout),
            Err(e) => return Attempt::Retry(ClientError::Transport(e.to_string())),
        };
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Attempt::Fail(ClientError::Auth(status.as_u16()));
        }
        if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            return Attempt::Retry(ClientError::Status(status.as_u16()));
        }
        if !status.is_success() {
            return Attempt::Fail(ClientError::Status(status.as_u16()));
        }
        let body: serde_json::Value = match resp.json() {
            Ok(v) => v,
            Err(e) if e.is_timeout() => return Attempt::Retry(ClientError::Timeout),
            Err(e) => return Attempt::Fail(ClientError::Decode(e.to_string())),
        };
        match body.pointer("/choices/0/message/content").and_then(|c| c.as_str()) {
            Some(s) => Attempt::Done(s.to_string()),
            None => Attempt::Fail(ClientError::Decode("no choices[0].message.content".into())),
        }
    }
}

impl ChatClient for HttpClient {
    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    fn max_in_flight(&self) -> usize {
        self.config.max_in_flight
    }

    /// Retries transport errors, timeouts, 429 and 5xx with exponential
    /// backoff; authentication failures return at once.
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, ClientError> {
        let mut payload = json!({
            "model": self.config.model_id,
            "messages": [{"role": "user", "content": request.body}],
            "temperature": request.temperature,
        });
        if let Some(seed) = request.seed {
            payload["seed"] = json!(seed);
        }
        let mut retries = 0;
        loop {
            match self.attempt(&payload) {
                Attempt::Done(s) => return Ok(s),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if retries >= self.config.max_retries => {
                    return Err(match e {
                        ClientError::Timeout => ClientError::Timeout,
                        e => ClientError::RetriesExhausted { attempts: retries + 1, last: Box::new(e) },
                    })
                }
                Attempt::Retry(e) => {
                    let wait = self.config.backoff_ms.saturating_mul(1 << retries.min(16));
                    log::warn!("{}: {e}; retry {} in {wait} ms", self.config.model_id, retries + 1);
                    std::thread::sleep(Duration::from_millis(wait));
                    retries += 1;
                }
            }
        }
    }
}
