use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine as _;
use crate::model::{Seconds, VideoMeta};

/// The recording handed to a provider: its metadata plus, optionally, the
/// raw bytes. Without bytes the provider is expected to fetch `meta.uri`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VideoRef {
    pub meta: VideoMeta,
    pub bytes: Option<Vec<u8>>,
}

impl VideoRef {
    pub fn new(meta: VideoMeta) -> Self {
        VideoRef { meta, bytes: None }
    }

    /// File stem of the uri: `file:videos/granny-square.mp4` gives
    /// `granny-square`. Used to look up mock transcripts.
    pub fn key(&self) -> String {
        let uri = self.meta.uri.as_str();
        let path = uri.split(['?', '#']).next().unwrap_or(uri);
        let last = path.rsplit(['/', ':']).find(|s| !s.is_empty()).unwrap_or(path);
        match last.rsplit_once('.') {
            Some((stem, _)) if !stem.is_empty() => stem.to_owned(),
            _ => last.to_owned(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capabilities {
    /// Longest video the provider accepts.
    pub max_video: Seconds,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    /// The provider cannot serve this request at all; retrying is pointless.
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("provider call exceeded its {0:?} deadline")]
    Timeout(Duration),
    #[error("transport error: {0}")]
    Transport(String),
}

/// A multimodal model that turns a prompt plus a video into raw text.
pub trait ModelProvider: Send + Sync {
    fn name(&self) -> &str;
    fn capabilities(&self) -> Capabilities;
    /// `attempt` counts from 1. Implementations must return within
    /// `deadline` or report [`ProviderError::Timeout`].
    fn analyze(&self, prompt: &str, video: &VideoRef, attempt: usize, deadline: Duration) -> Result<String, ProviderError>;
}

/// Replays recorded outputs from `<root>/<video key>/attempt-<n>.json`.
/// When attempt `n` has no file the highest-numbered one is reused, so a
/// single file stands for "always answers this".
#[derive(Clone, Debug)]
pub struct MockProvider {
    root: PathBuf,
}

impl MockProvider {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        MockProvider { root: root.into() }
    }

    fn attempts(dir: &Path) -> Vec<(usize, PathBuf)> {
        let Ok(entries) = std::fs::read_dir(dir) else { return Vec::new() };
        let mut found: Vec<(usize, PathBuf)> = entries
            .filter_map(Result::ok)
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let n = name.strip_prefix("attempt-")?.strip_suffix(".json")?.parse().ok()?;
                Some((n, e.path()))
            })
            .collect();
        found.sort();
        found
    }
}

impl ModelProvider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { max_video: Seconds::whole(24 * 3600) }
    }

    fn analyze(&self, _prompt: &str, video: &VideoRef, attempt: usize, _deadline: Duration) -> Result<String, ProviderError> {
        let key = video.key();
        let dir = self.root.join(&key);
        let files = Self::attempts(&dir);
        let path = files
            .iter()
            .find(|(n, _)| *n == attempt)
            .or_else(|| files.iter().rev().find(|(n, _)| *n < attempt))
            .or(files.first())
            .map(|(_, p)| p)
            .ok_or_else(|| ProviderError::Unavailable(format!("no mock transcript for `{key}` in {}", dir.display())))?;
        std::fs::read_to_string(path).map_err(|e| ProviderError::Transport(format!("{}: {e}", path.display())))
    }
}

/// Answers from an in-memory script and keeps every prompt it was sent.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    script: Vec<Result<String, ProviderError>>,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedProvider {
    pub fn new(script: Vec<Result<String, ProviderError>>) -> Self {
        ScriptedProvider { script, prompts: Mutex::new(Vec::new()) }
    }

    pub fn from_texts<I: IntoIterator<Item = String>>(texts: I) -> Self {
        Self::new(texts.into_iter().map(Ok).collect())
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("prompt log").clone()
    }
}

impl ModelProvider for ScriptedProvider {
    fn name(&self) -> &str {
        "scripted"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { max_video: Seconds::whole(24 * 3600) }
    }

    fn analyze(&self, prompt: &str, _video: &VideoRef, attempt: usize, _deadline: Duration) -> Result<String, ProviderError> {
        self.prompts.lock().expect("prompt log").push(prompt.to_owned());
        let i = attempt.saturating_sub(1).min(self.script.len().saturating_sub(1));
        self.script.get(i).cloned().unwrap_or_else(|| Err(ProviderError::Unavailable("empty script".into())))
    }
}

/// Posts `{prompt, video}` as JSON to an endpoint and reads `{text}` back.
/// The video goes as `{uri}` or, when bytes are loaded, `{uri, bytes}` with
/// base64 content. Point it at a local model server to keep footage on the
/// machine.
#[derive(Clone, Debug)]
pub struct HttpProvider {
    pub endpoint: String,
    pub name: String,
    pub max_video: Seconds,
    pub bearer: Option<String>,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpProvider {
            endpoint: endpoint.into(),
            name: "http".into(),
            max_video: Seconds::whole(3600),
            bearer: None,
        }
    }
}

impl ModelProvider for HttpProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { max_video: self.max_video }
    }

    fn analyze(&self, prompt: &str, video: &VideoRef, _attempt: usize, deadline: Duration) -> Result<String, ProviderError> {
        let mut v = serde_json::json!({ "uri": video.meta.uri });
        if let Some(bytes) = &video.bytes {
            v["bytes"] = base64::engine::general_purpose::STANDARD.encode(bytes).into();
        }
        let body = serde_json::json!({ "prompt": prompt, "video": v });
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(deadline)).build().into();
        let mut req = agent.post(&self.endpoint);
        if let Some(token) = &self.bearer {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| match e {
            ureq::Error::Timeout(_) => ProviderError::Timeout(deadline),
            ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => ProviderError::Unavailable(e.to_string()),
            ureq::Error::StatusCode(503) => ProviderError::Unavailable("status 503".into()),
            other => ProviderError::Transport(other.to_string()),
        })?;
        let reply: serde_json::Value = resp.body_mut().read_json().map_err(|e| ProviderError::Transport(e.to_string()))?;
        reply
            .get("text")
            .and_then(|t| t.as_str())
            .map(str::to_owned)
            .ok_or_else(|| ProviderError::Transport("response has no string `text` field".into()))
    }
}
