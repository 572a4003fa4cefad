//! Language-model clients behind one `complete(prompt, params)` call.
//!
//! [`ScriptedClient`] replays a transcript file and is what the tests and
//! the CLI mock mode use. [`HttpClient`] talks to an OpenAI-style
//! chat-completions endpoint.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

/// Environment variable holding the bearer token for [`HttpClient`].
pub const API_KEY_ENV: &str = "COVSLICE_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct LlmParams {
    /// Stable request name used by scripted transcripts.
    pub key: Option<String>,
    pub timeout: Duration,
    pub retries: u32,
    pub temperature: Option<f32>,
}

impl Default for LlmParams {
    fn default() -> Self {
        Self {
            key: None,
            timeout: Duration::from_secs(120),
            retries: 1,
            temperature: None,
        }
    }
}

impl LlmParams {
    pub fn keyed(key: impl Into<String>) -> Self {
        Self {
            key: Some(key.into()),
            ..Self::default()
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("model unavailable: {0}")]
    Unavailable(String),
    #[error("transcript has no response for {0}")]
    NoScriptedResponse(String),
    #[error("request failed: {0}")]
    Request(String),
    #[error("cannot read transcript {}: {message}", path.display())]
    Transcript { path: PathBuf, message: String },
}

pub trait LlmClient: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &str, params: &LlmParams) -> Result<String, LlmError>;
}

/// Hex SHA-256 of a prompt, as used for `sha256:` transcript keys.
pub fn prompt_digest(prompt: &str) -> String {
    Sha256::digest(prompt.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(default)]
    pub name: String,
    /// Keyed by `sha256:<digest>`, by request key, or `*` as a fallback.
    pub responses: BTreeMap<String, String>,
}

/// One logged call, kept for inspection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub key: Option<String>,
    pub digest: String,
    pub matched: String,
}

#[derive(Debug)]
pub struct ScriptedClient {
    transcript: Transcript,
    calls: Mutex<Vec<CallRecord>>,
}

impl ScriptedClient {
    pub fn new(transcript: Transcript) -> Self {
        Self {
            transcript,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let err = |message: String| LlmError::Transcript {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let mut t: Transcript = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if t.name.is_empty() {
            t.name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
        Ok(Self::new(t))
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().expect("call log").clone()
    }
}

impl LlmClient for ScriptedClient {
    fn name(&self) -> &str {
        &self.transcript.name
    }

    fn complete(&self, prompt: &str, params: &LlmParams) -> Result<String, LlmError> {
        let digest = prompt_digest(prompt);
        let by_digest = format!("sha256:{digest}");
        let candidates = [Some(by_digest.as_str()), params.key.as_deref(), Some("*")];
        for k in candidates.into_iter().flatten() {
            if let Some(r) = self.transcript.responses.get(k) {
                self.calls.lock().expect("call log").push(CallRecord {
                    key: params.key.clone(),
                    digest,
                    matched: k.to_string(),
                });
                return Ok(r.clone());
            }
        }
        Err(LlmError::NoScriptedResponse(
            params.key.clone().unwrap_or(by_digest),
        ))
    }
}

/// Answers every `//<<EDIT id hint>>` marker in the prompt with a fill
/// that echoes the hint as a comment.
#[derive(Debug, Clone, Default)]
pub struct EchoClient;

impl LlmClient for EchoClient {
    fn name(&self) -> &str {
        "echo"
    }

    fn complete(&self, prompt: &str, _params: &LlmParams) -> Result<String, LlmError> {
        let mut out = String::new();
        let mut seen = std::collections::BTreeSet::new();
        for line in prompt.lines() {
            let Some(rest) = line.trim().strip_prefix("//<<EDIT ") else {
                continue;
            };
            let Some(rest) = rest.strip_suffix(">>") else {
                continue;
            };
            let (id, hint) = rest.split_once(' ').unwrap_or((rest, ""));
            if seen.insert(id.to_string()) {
                out.push_str(&format!("//<<FILL {id}>>\n// {hint}\n//<<END {id}>>\n"));
            }
        }
        Ok(out)
    }
}

type CompleteFn = dyn Fn(&str, &LlmParams) -> Result<String, LlmError> + Send + Sync;

/// Client backed by a closure.
pub struct FnClient {
    name: String,
    f: Box<CompleteFn>,
}

impl FnClient {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(&str, &LlmParams) -> Result<String, LlmError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            f: Box::new(f),
        }
    }
}

impl LlmClient for FnClient {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, prompt: &str, params: &LlmParams) -> Result<String, LlmError> {
        (self.f)(prompt, params)
    }
}

/// OpenAI-style chat-completions client.
#[derive(Debug, Clone)]
pub struct HttpClient {
    pub endpoint: String,
    pub model: String,
    api_key: Option<String>,
}

impl HttpClient {
    /// Reads the API key from [`API_KEY_ENV`].
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
        }
    }

    fn request(&self, prompt: &str, params: &LlmParams) -> Result<String, LlmError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(params.timeout))
            .build()
            .into();
        let mut body = serde_json::json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": prompt }],
        });
        if let Some(t) = params.temperature {
            body["temperature"] = serde_json::json!(t);
        }
        let mut req = agent.post(&self.endpoint);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| match e {
            ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
                LlmError::Unavailable(e.to_string())
            }
            other => LlmError::Request(other.to_string()),
        })?;
        let v: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::Request(e.to_string()))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::Request("response has no message content".into()))
    }
}

impl LlmClient for HttpClient {
    fn name(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str, params: &LlmParams) -> Result<String, LlmError> {
        let mut last = None;
        for attempt in 0..=params.retries {
            match self.request(prompt, params) {
                Ok(r) => return Ok(r),
                Err(e) => {
                    log::warn!("{} attempt {} failed: {e}", self.model, attempt + 1);
                    last = Some(e);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

/// Builds a client from `mock:<transcript.json>`, `echo`, or
/// `http:<endpoint>[#model]`.
pub fn client_from_spec(spec: &str) -> Result<Box<dyn LlmClient>, LlmError> {
    if let Some(path) = spec.strip_prefix("mock:") {
        return Ok(Box::new(ScriptedClient::from_file(Path::new(path))?));
    }
    if spec == "echo" {
        return Ok(Box::new(EchoClient));
    }
    if let Some(rest) = spec.strip_prefix("http:") {
        let (endpoint, model) = rest.split_once('#').unwrap_or((rest, "default"));
        let endpoint = if endpoint.starts_with("//") {
            format!("http:{endpoint}")
        } else {
            endpoint.to_string()
        };
        return Ok(Box::new(HttpClient::new(endpoint, model)));
    }
    Err(LlmError::Unavailable(format!(
        "unknown client `{spec}` (expected mock:<file>, echo or http:<endpoint>)"
    )))
}
