//! Text-in, text-out language model backends.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Entities,
    Compose,
    Ranks,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Entities => "entities",
            Task::Compose => "compose",
            Task::Ranks => "ranks",
        }
    }

    fn extension(&self) -> &'static str {
        match self {
            Task::Compose => "dsl",
            Task::Entities | Task::Ranks => "json",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One model call. `rendered` is the full instruction text sent to a real
/// model; `user_prompt` is the operator's prompt it was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmRequest {
    pub task: Task,
    pub user_prompt: String,
    pub rendered: String,
    /// 0 for the first try, incremented on each retry.
    pub attempt: u32,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("language model backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("no stub fixture for {task} prompt {hash} (looked for {path})")]
    FixtureMiss { task: Task, hash: String, path: PathBuf },
    #[error("backend response is not valid: {0}")]
    BadResponse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LlmError {
    /// Transport problems worth retrying; content problems are handled by
    /// the caller's feedback loop instead.
    pub fn is_transient(&self) -> bool {
        matches!(self, LlmError::Unreachable(_)) || matches!(self, LlmError::Status { status, .. } if *status >= 500)
    }
}

pub trait LlmBackend: Send + Sync {
    /// Stable identifier used in cache keys.
    fn id(&self) -> String;
    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError>;
}

/// Hex SHA-256 of a prompt, the key the stub backend files responses under.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Serves canned responses from `<dir>/<sha256(prompt)>/<task>[.<attempt>].<ext>`.
///
/// A retry first looks for its attempt-specific file and falls back to the
/// plain one. Unknown prompts are an error, never a silent default.
#[derive(Debug, Clone)]
pub struct StubBackend {
    dir: PathBuf,
}

impl StubBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn fixture_path(dir: &Path, prompt: &str, task: Task, attempt: Option<u32>) -> PathBuf {
        let name = match attempt {
            Some(a) => format!("{}.{a}.{}", task.as_str(), task.extension()),
            None => format!("{}.{}", task.as_str(), task.extension()),
        };
        dir.join(prompt_hash(prompt)).join(name)
    }

    /// Writes a fixture response for `prompt`.
    pub fn record(dir: &Path, prompt: &str, task: Task, attempt: Option<u32>, response: &str) -> std::io::Result<PathBuf> {
        let path = Self::fixture_path(dir, prompt, task, attempt);
        std::fs::create_dir_all(path.parent().expect("fixture path has a parent"))?;
        std::fs::write(&path, response)?;
        Ok(path)
    }
}

impl LlmBackend for StubBackend {
    fn id(&self) -> String {
        format!("stub:{}", self.dir.display())
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        let specific = Self::fixture_path(&self.dir, &request.user_prompt, request.task, Some(request.attempt));
        let plain = Self::fixture_path(&self.dir, &request.user_prompt, request.task, None);
        for path in [&specific, &plain] {
            match std::fs::read_to_string(path) {
                Ok(text) => return Ok(text),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Err(LlmError::FixtureMiss {
            task: request.task,
            hash: prompt_hash(&request.user_prompt),
            path: plain,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmBackendConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
}

impl Default for LlmBackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8081/generate".into(),
            model: "gemma-2-27b-it".into(),
            timeout_secs: 120.0,
            max_retries: 3,
        }
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    model: &'a str,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

/// POSTs `{"model", "prompt"}` and reads `{"text"}` back. Transport errors
/// and 5xx responses are retried up to `max_retries` times.
pub struct HttpBackend {
    config: LlmBackendConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: LlmBackendConfig) -> Result<Self, LlmError> {
        if !(config.timeout_secs > 0.0) {
            return Err(LlmError::BadResponse("timeout must be positive".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Unreachable(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn once(&self, prompt: &str) -> Result<String, LlmError> {
        let resp = self
            .client
            .post(&self.config.endpoint)
            .json(&GenerateRequest {
                model: &self.config.model,
                prompt,
            })
            .send()
            .map_err(|e| LlmError::Unreachable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(LlmError::Status {
                status: status.as_u16(),
                body,
            });
        }
        let body: GenerateResponse = resp.json().map_err(|e| LlmError::BadResponse(e.to_string()))?;
        Ok(body.text)
    }
}

impl LlmBackend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}#{}", self.config.endpoint, self.config.model)
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        let mut tries = 0;
        loop {
            match self.once(&request.rendered) {
                Err(e) if e.is_transient() && tries < self.config.max_retries => {
                    tries += 1;
                    log::warn!("llm call failed ({e}); retry {tries}/{}", self.config.max_retries);
                }
                other => return other,
            }
        }
    }
}

/// In-memory backend replaying a fixed list of responses per task; records
/// every request it sees.
#[derive(Default)]
pub struct ScriptedBackend {
    script: Mutex<Vec<(Task, String)>>,
    seen: Mutex<Vec<LlmRequest>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(self, task: Task, response: impl Into<String>) -> Self {
        self.script.lock().unwrap().push((task, response.into()));
        self
    }

    pub fn requests(&self) -> Vec<LlmRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl LlmBackend for ScriptedBackend {
    fn id(&self) -> String {
        "scripted".into()
    }

    fn complete(&self, request: &LlmRequest) -> Result<String, LlmError> {
        self.seen.lock().unwrap().push(request.clone());
        let mut script = self.script.lock().unwrap();
        let at = script
            .iter()
            .position(|(t, _)| *t == request.task)
            .ok_or_else(|| LlmError::Unreachable(format!("script has no {} response left", request.task)))?;
        Ok(script.remove(at).1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(task: Task, prompt: &str, attempt: u32) -> LlmRequest {
        LlmRequest {
            task,
            user_prompt: prompt.into(),
            rendered: format!("render {prompt}"),
            attempt,
        }
    }

    #[test]
    fn stub_reads_attempt_specific_then_plain() {
        let dir = tempfile::tempdir().unwrap();
        StubBackend::record(dir.path(), "go", Task::Compose, None, "plain").unwrap();
        StubBackend::record(dir.path(), "go", Task::Compose, Some(1), "second").unwrap();
        let stub = StubBackend::new(dir.path());
        assert_eq!(stub.complete(&req(Task::Compose, "go", 0)).unwrap(), "plain");
        assert_eq!(stub.complete(&req(Task::Compose, "go", 1)).unwrap(), "second");
        assert_eq!(stub.complete(&req(Task::Compose, "go", 2)).unwrap(), "plain");
        match stub.complete(&req(Task::Ranks, "go", 0)) {
            Err(LlmError::FixtureMiss { hash, .. }) => assert_eq!(hash, prompt_hash("go")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn prompt_hash_is_sha256() {
        assert_eq!(
            prompt_hash("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn scripted_replays_in_order() {
        let b = ScriptedBackend::new().push(Task::Ranks, "a").push(Task::Ranks, "b");
        assert_eq!(b.complete(&req(Task::Ranks, "p", 0)).unwrap(), "a");
        assert_eq!(b.complete(&req(Task::Ranks, "p", 1)).unwrap(), "b");
        assert!(b.complete(&req(Task::Ranks, "p", 2)).is_err());
        assert_eq!(b.requests().len(), 3);
    }

    #[test]
    fn unreachable_http_backend() {
        let b = HttpBackend::new(LlmBackendConfig {
            endpoint: "http://127.0.0.1:9/generate".into(),
            timeout_secs: 2.0,
            max_retries: 1,
            ..Default::default()
        })
        .unwrap();
        assert!(matches!(b.complete(&req(Task::Entities, "p", 0)), Err(LlmError::Unreachable(_))));
    }
}
