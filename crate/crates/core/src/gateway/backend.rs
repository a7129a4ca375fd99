//! Backend descriptors and the two drivers behind them: a deterministic
//! fixture-backed mock and an OpenAI-compatible chat endpoint.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gateway::ledger::TokenUsage;
use crate::gateway::ModelRequest;

pub const DEFAULT_VISION_TOKENS_PER_IMAGE: u64 = 765;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Vision,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Endpoint {
    /// Scripted responses from a fixture file; no network.
    Mock { fixtures: PathBuf },
    /// OpenAI-compatible chat completions endpoint. The API key is read
    /// from the named environment variable, never from the config file.
    OpenAiChat {
        base_url: String,
        model: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        api_key_env: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        temperature: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_secs: Option<u64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub id: String,
    pub modality: Modality,
    #[serde(flatten)]
    pub endpoint: Endpoint,
    /// USD per million input tokens.
    #[serde(default)]
    pub price_in: f64,
    /// USD per million output tokens.
    #[serde(default)]
    pub price_out: f64,
    #[serde(default)]
    pub max_retries: u32,
    /// Rate limit: maximum concurrent calls to this backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_in_flight: Option<usize>,
    /// Flat vision-token charge per image when the endpoint reports no
    /// usage itself (mock and local deployments).
    #[serde(default = "default_vision_tokens")]
    pub vision_tokens_per_image: u64,
}

fn default_vision_tokens() -> u64 {
    DEFAULT_VISION_TOKENS_PER_IMAGE
}

impl BackendDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Config("backend id must be non-empty".into()));
        }
        if self.price_in < 0.0 || self.price_out < 0.0 {
            return Err(Error::Config(format!("backend '{}' has a negative price", self.id)));
        }
        Ok(())
    }
}

/// Raw prompt/completion counts as an endpoint reports them, before the
/// gateway assigns lanes by modality.
pub struct RawUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

pub struct DriverReply {
    pub text: String,
    /// Usage exactly as scripted/reported; None means "estimate locally".
    pub usage: Option<TokenUsage>,
}

pub enum Driver {
    Mock(MockDriver),
    Http(HttpDriver),
}

impl Driver {
    pub fn call(&self, backend: &BackendDescriptor, req: &ModelRequest) -> Result<DriverReply> {
        match self {
            Driver::Mock(m) => m.call(backend, req),
            Driver::Http(h) => h.call(backend, req),
        }
    }
}

/// One scripted fixture response.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum FixtureEntry {
    Bare(String),
    Full {
        text: String,
        #[serde(default)]
        usage: Option<TokenUsage>,
    },
}

impl FixtureEntry {
    fn reply(&self) -> DriverReply {
        match self {
            FixtureEntry::Bare(text) => {
                DriverReply { text: text.clone(), usage: Some(TokenUsage::default()) }
            }
            FixtureEntry::Full { text, usage } => DriverReply {
                text: text.clone(),
                usage: Some(usage.unwrap_or_default()),
            },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum FixtureValue {
    One(FixtureEntry),
    Sequence(Vec<FixtureEntry>),
}

/// Deterministic scripted backend.
///
/// Fixture file shape: `{ "<role_tag>": entry | [entry, ...] }` where an
/// entry is either a bare string or `{"text": ..., "usage": {...}}`. A key
/// may carry a prompt-hash suffix (`"painter.compose@<hex16>"`) to pin a
/// response to one exact prompt; the bare role key is the fallback.
/// Sequences are consumed call by call and stick at the last entry, so a
/// scripted verdict series like ["1", "1", "3"] stays deterministic across
/// reruns of equal length.
pub struct MockDriver {
    fixtures: HashMap<String, Vec<FixtureEntry>>,
    cursors: Mutex<HashMap<String, usize>>,
}

impl MockDriver {
    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read mock fixtures {}: {e}", path.display()))
        })?;
        let raw: HashMap<String, FixtureValue> = serde_json::from_str(&data)
            .map_err(|e| Error::Config(format!("bad mock fixtures {}: {e}", path.display())))?;
        let mut fixtures = HashMap::new();
        for (key, value) in raw {
            let entries = match value {
                FixtureValue::One(e) => vec![e],
                FixtureValue::Sequence(seq) => seq,
            };
            if entries.is_empty() {
                return Err(Error::Config(format!("mock fixture '{key}' is an empty sequence")));
            }
            fixtures.insert(key, entries);
        }
        Ok(MockDriver { fixtures, cursors: Mutex::new(HashMap::new()) })
    }

    fn call(&self, backend: &BackendDescriptor, req: &ModelRequest) -> Result<DriverReply> {
        let hashed_key = format!("{}@{}", req.role_tag, prompt_hash(req));
        let key = if self.fixtures.contains_key(&hashed_key) {
            hashed_key
        } else if self.fixtures.contains_key(&req.role_tag) {
            req.role_tag.clone()
        } else {
            return Err(Error::Config(format!(
                "mock backend '{}' has no fixture for role '{}'",
                backend.id, req.role_tag
            )));
        };
        let entries = &self.fixtures[&key];
        let mut cursors = self.cursors.lock().expect("cursor lock poisoned");
        let cursor = cursors.entry(key).or_insert(0);
        let entry = &entries[(*cursor).min(entries.len() - 1)];
        *cursor += 1;
        Ok(entry.reply())
    }
}

/// Stable 16-hex-digit digest of a request's prompts, for fixture pinning.
pub fn prompt_hash(req: &ModelRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(req.system_prompt.as_bytes());
    hasher.update([0x1f]);
    hasher.update(req.user_prompt.as_bytes());
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// OpenAI-compatible chat driver. Images travel as data URLs.
pub struct HttpDriver {
    client: reqwest::blocking::Client,
}

impl HttpDriver {
    pub fn new(timeout_secs: u64) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(HttpDriver { client })
    }

    fn call(&self, backend: &BackendDescriptor, req: &ModelRequest) -> Result<DriverReply> {
        let Endpoint::OpenAiChat { base_url, model, api_key_env, temperature, .. } =
            &backend.endpoint
        else {
            return Err(Error::Config(format!("backend '{}' is not an HTTP endpoint", backend.id)));
        };

        let user_content = if req.images.is_empty() {
            serde_json::Value::String(req.user_prompt.clone())
        } else {
            let mut parts = vec![serde_json::json!({"type": "text", "text": req.user_prompt})];
            for image in &req.images {
                let url = data_url(image)?;
                parts.push(serde_json::json!({"type": "image_url", "image_url": {"url": url}}));
            }
            serde_json::Value::Array(parts)
        };
        let mut body = serde_json::json!({
            "model": model,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": user_content},
            ],
        });
        if let Some(t) = temperature {
            body["temperature"] = serde_json::json!(t);
        }
        if req.expect_json {
            body["response_format"] = serde_json::json!({"type": "json_object"});
        }

        let url = format!("{}/chat/completions", base_url.trim_end_matches('/'));
        let mut request = self.client.post(&url).json(&body);
        if let Some(env_name) = api_key_env {
            let key = std::env::var(env_name).map_err(|_| {
                Error::Config(format!(
                    "backend '{}': environment variable {env_name} not set",
                    backend.id
                ))
            })?;
            request = request.bearer_auth(key);
        }

        let response = request.send().map_err(transport(&backend.id))?;
        let status = response.status();
        let payload: serde_json::Value = response.json().map_err(transport(&backend.id))?;
        if !status.is_success() {
            return Err(Error::BackendUnavailable {
                backend: backend.id.clone(),
                detail: format!("HTTP {status}: {payload}"),
            });
        }
        let text = payload["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| Error::BackendUnavailable {
                backend: backend.id.clone(),
                detail: format!("response missing choices[0].message.content: {payload}"),
            })?
            .to_string();
        let usage = payload.get("usage").map(|u| RawUsage {
            prompt_tokens: u["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: u["completion_tokens"].as_u64().unwrap_or(0),
        });
        Ok(DriverReply { text, usage: usage.map(|raw| lane_usage(backend.modality, &raw)) })
    }
}

/// Assign endpoint-reported prompt/completion counts to token lanes by the
/// backend's modality: a vision model's whole bill lands in the vision lanes.
pub fn lane_usage(modality: Modality, raw: &RawUsage) -> TokenUsage {
    match modality {
        Modality::Text => TokenUsage::text(raw.prompt_tokens, raw.completion_tokens),
        Modality::Vision => TokenUsage::vision(raw.prompt_tokens, raw.completion_tokens),
    }
}

fn transport(backend: &str) -> impl Fn(reqwest::Error) -> Error + '_ {
    move |e| Error::BackendUnavailable { backend: backend.to_string(), detail: e.to_string() }
}

fn data_url(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Render(format!("cannot read image {}: {e}", path.display())))?;
    let media = match path.extension().and_then(|e| e.to_str()) {
        Some("jpg") | Some("jpeg") => "image/jpeg",
        _ => "image/png",
    };
    Ok(format!("data:{media};base64,{}", base64(&bytes)))
}

/// Standard-alphabet base64 with padding. Small enough to keep local.
fn base64(data: &[u8]) -> String {
    const ALPHABET: &[u8; 64] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    let mut out = String::with_capacity(data.len().div_ceil(3) * 4);
    for chunk in data.chunks(3) {
        let b0 = chunk[0] as u32;
        let b1 = *chunk.get(1).unwrap_or(&0) as u32;
        let b2 = *chunk.get(2).unwrap_or(&0) as u32;
        let n = (b0 << 16) | (b1 << 8) | b2;
        out.push(ALPHABET[(n >> 18) as usize & 63] as char);
        out.push(ALPHABET[(n >> 12) as usize & 63] as char);
        out.push(if chunk.len() > 1 { ALPHABET[(n >> 6) as usize & 63] as char } else { '=' });
        out.push(if chunk.len() > 2 { ALPHABET[n as usize & 63] as char } else { '=' });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base64_matches_known_vectors() {
        assert_eq!(base64(b""), "");
        assert_eq!(base64(b"f"), "Zg==");
        assert_eq!(base64(b"fo"), "Zm8=");
        assert_eq!(base64(b"foo"), "Zm9v");
        assert_eq!(base64(b"foobar"), "Zm9vYmFy");
    }

    #[test]
    fn prompt_hash_is_stable_and_prompt_sensitive() {
        let req = ModelRequest {
            role_tag: "painter.compose".into(),
            system_prompt: "sys".into(),
            user_prompt: "user".into(),
            images: vec![],
            expect_json: true,
        };
        let h1 = prompt_hash(&req);
        let h2 = prompt_hash(&req);
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 16);
        let mut other = req;
        other.user_prompt = "user2".into();
        assert_ne!(h1, prompt_hash(&other));
    }

    #[test]
    fn lane_assignment_follows_modality() {
        let raw = RawUsage { prompt_tokens: 7, completion_tokens: 2 };
        assert_eq!(lane_usage(Modality::Text, &raw), TokenUsage::text(7, 2));
        assert_eq!(lane_usage(Modality::Vision, &raw), TokenUsage::vision(7, 2));
    }
}
