//! Language-model client contract shared by the monologue generator and the
//! metadata classifiers: a chat-completions-style HTTP client plus the
//! trait offline stubs implement.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("auth token env var {0} is not set")]
    MissingToken(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed completion response: {0}")]
    BadResponse(String),
    #[error("audit log: {0}")]
    Audit(#[from] std::io::Error),
}

/// A completion backend. Implementations must be safe for concurrent calls.
pub trait LlmClient: Sync {
    fn name(&self) -> &'static str;
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

/// Settings for the HTTP client. The auth token is read from the
/// environment variable named here, never stored in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpLlmConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_auth_env")]
    pub auth_env_var: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// When set, every request/response pair is appended here as JSONL with
    /// content hashes.
    #[serde(default)]
    pub audit_log: Option<PathBuf>,
}

fn default_auth_env() -> String {
    "TRAJMINE_LLM_TOKEN".into()
}

fn default_temperature() -> f64 {
    0.3
}

fn default_max_tokens() -> u32 {
    1024
}

fn default_timeout_ms() -> u64 {
    60_000
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

pub fn sha256_hex(data: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(data.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct HttpLlmClient {
    config: HttpLlmConfig,
    client: reqwest::blocking::Client,
    audit: Option<Mutex<std::fs::File>>,
}

impl HttpLlmClient {
    pub fn new(config: HttpLlmConfig) -> Result<HttpLlmClient, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let audit = match &config.audit_log {
            Some(path) => {
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                Some(Mutex::new(
                    std::fs::OpenOptions::new().create(true).append(true).open(path)?,
                ))
            }
            None => None,
        };
        Ok(HttpLlmClient { config, client, audit })
    }

    fn audit_line(&self, prompt: &str, response: &str, ok: bool) -> Result<(), LlmError> {
        if let Some(file) = &self.audit {
            let line = serde_json::json!({
                "ts": std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
                "model": self.config.model,
                "prompt_sha256": sha256_hex(prompt),
                "response_sha256": sha256_hex(response),
                "ok": ok,
            });
            let mut f = file.lock().expect("audit lock");
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

impl LlmClient for HttpLlmClient {
    fn name(&self) -> &'static str {
        "http"
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let token = std::env::var(&self.config.auth_env_var)
            .map_err(|_| LlmError::MissingToken(self.config.auth_env_var.clone()))?;
        let body = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage { role: "user", content: prompt }],
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        let resp = self
            .client
            .post(&self.config.endpoint)
            .bearer_auth(token)
            .json(&body)
            .send()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| LlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            self.audit_line(prompt, &text, false)?;
            return Err(LlmError::Transport(format!("status {status}: {text}")));
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| LlmError::BadResponse(e.to_string()))?;
        let content = parsed
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .ok_or_else(|| LlmError::BadResponse("no choices in response".into()))?;
        self.audit_line(prompt, &content, true)?;
        Ok(content)
    }
}
