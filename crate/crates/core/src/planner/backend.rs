use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PlannerError;

/// A text-completion service. Implementations must tolerate concurrent calls.
pub trait PlannerBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, PlannerError>;
}

/// Lowercase hex SHA-256 of the prompt bytes.
pub fn fixture_key(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Replays responses stored as `<dir>/<fixture_key>.txt`.
#[derive(Debug, Clone)]
pub struct MockBackend {
    dir: PathBuf,
}

impl MockBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn fixture_path(&self, prompt: &str) -> PathBuf {
        self.dir.join(format!("{}.txt", fixture_key(prompt)))
    }

    /// Store `response` as the reply to `prompt`.
    pub fn record(&self, prompt: &str, response: &str) -> Result<PathBuf, PlannerError> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.fixture_path(prompt);
        std::fs::write(&path, response)?;
        Ok(path)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl PlannerBackend for MockBackend {
    fn complete(&self, prompt: &str) -> Result<String, PlannerError> {
        let path = self.fixture_path(prompt);
        match std::fs::read_to_string(&path) {
            Ok(s) => Ok(s),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(PlannerError::MissingFixture(path.display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

pub const URL_ENV: &str = "PATHCLIP_PLANNER_URL";
pub const KEY_ENV: &str = "PATHCLIP_PLANNER_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Extra attempts after the first failure.
    pub retries: u32,
    pub max_in_flight: usize,
    pub max_tokens: u32,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key: None,
            timeout: Duration::from_secs(30),
            retries: 2,
            max_in_flight: 4,
            max_tokens: 512,
        }
    }

    /// URL and key from the environment.
    pub fn from_env() -> Result<Self, PlannerError> {
        let url = std::env::var(URL_ENV).map_err(|_| PlannerError::Backend(format!("{URL_ENV} is not set")))?;
        Ok(Self { api_key: std::env::var(KEY_ENV).ok(), ..Self::new(url) })
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

/// JSON-over-HTTP completion client with bounded concurrency.
pub struct RemoteBackend {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    in_flight: Mutex<usize>,
    slot_freed: Condvar,
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Result<Self, PlannerError> {
        if cfg.max_in_flight == 0 {
            return Err(PlannerError::Backend("max_in_flight must be at least 1".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { cfg, agent, in_flight: Mutex::new(0), slot_freed: Condvar::new() })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    fn acquire(&self) {
        let mut n = self.in_flight.lock().expect("in-flight counter poisoned");
        while *n >= self.cfg.max_in_flight {
            n = self.slot_freed.wait(n).expect("in-flight counter poisoned");
        }
        *n += 1;
    }

    fn release(&self) {
        *self.in_flight.lock().expect("in-flight counter poisoned") -= 1;
        self.slot_freed.notify_one();
    }

    /// The outer error is fatal, the inner one retryable.
    fn attempt(&self, prompt: &str) -> Result<Result<String, String>, PlannerError> {
        let mut req = self.agent.post(&self.cfg.url);
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let resp = match req.send_json(CompletionRequest { prompt, max_tokens: self.cfg.max_tokens }) {
            Ok(r) => r,
            Err(e) => return Ok(Err(e.to_string())),
        };
        let status = resp.status().as_u16();
        if status >= 500 || status == 429 {
            return Ok(Err(format!("status {status}")));
        }
        if status >= 400 {
            return Err(PlannerError::Backend(format!("status {status}")));
        }
        let body: CompletionResponse = resp
            .into_body()
            .read_json()
            .map_err(|e| PlannerError::Backend(format!("bad response body: {e}")))?;
        Ok(Ok(body.text))
    }
}

impl PlannerBackend for RemoteBackend {
    fn complete(&self, prompt: &str) -> Result<String, PlannerError> {
        self.acquire();
        let mut last = String::new();
        let mut result = None;
        for attempt in 0..=self.cfg.retries {
            match self.attempt(prompt) {
                Ok(Ok(text)) => {
                    result = Some(Ok(text));
                    break;
                }
                Ok(Err(msg)) => {
                    log::warn!("planner request attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
                Err(e) => {
                    result = Some(Err(e));
                    break;
                }
            }
        }
        self.release();
        result.unwrap_or_else(|| {
            Err(PlannerError::Backend(format!("gave up after {} attempts: {last}", self.cfg.retries + 1)))
        })
    }
}
