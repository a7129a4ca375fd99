//! Model gateway: every LLM/VLM call in the pipeline goes through here.
//!
//! The gateway owns the backend drivers, enforces modality preconditions,
//! retries transport failures, meters tokens into a [`TokenLedger`], and
//! runs the JSON repair ladder for calls that expect structured output.
//! Callers never talk to an endpoint directly, which is what makes fully
//! offline scripted runs possible.

mod backend;
mod json_repair;
mod ledger;

pub use backend::{
    prompt_hash, BackendDescriptor, Endpoint, Modality, DEFAULT_VISION_TOKENS_PER_IMAGE,
};
pub use json_repair::parse_model_json;
pub use ledger::{compute_cost, LedgerSnapshot, TokenLedger, TokenUsage};

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};

use crate::error::{Error, Result};
use crate::schemas::{self, SchemaId};

use backend::{Driver, DriverReply, HttpDriver, MockDriver};

const DEFAULT_HTTP_TIMEOUT_SECS: u64 = 120;

/// One chat request. `images` must be empty exactly when the routed backend
/// is text-only.
#[derive(Debug, Clone)]
pub struct ModelRequest {
    pub role_tag: String,
    pub system_prompt: String,
    pub user_prompt: String,
    pub images: Vec<PathBuf>,
    pub expect_json: bool,
}

impl ModelRequest {
    pub fn text(role_tag: &str, system_prompt: &str, user_prompt: String) -> Self {
        ModelRequest {
            role_tag: role_tag.to_string(),
            system_prompt: system_prompt.to_string(),
            user_prompt,
            images: vec![],
            expect_json: false,
        }
    }

    pub fn vision(
        role_tag: &str,
        system_prompt: &str,
        user_prompt: String,
        images: Vec<PathBuf>,
    ) -> Self {
        ModelRequest {
            role_tag: role_tag.to_string(),
            system_prompt: system_prompt.to_string(),
            user_prompt,
            images,
            expect_json: false,
        }
    }

    pub fn expecting_json(mut self) -> Self {
        self.expect_json = true;
        self
    }
}

#[derive(Debug, Clone)]
pub struct ModelResponse {
    pub text: String,
    pub usage: TokenUsage,
}

struct Backend {
    desc: BackendDescriptor,
    driver: Driver,
    gate: Option<Semaphore>,
}

/// Thread-safe gateway over a set of configured backends.
pub struct Gateway {
    backends: BTreeMap<String, Backend>,
    ledger: TokenLedger,
    calls: AtomicU64,
}

impl Gateway {
    pub fn new(descriptors: Vec<BackendDescriptor>) -> Result<Self> {
        let mut backends = BTreeMap::new();
        for desc in descriptors {
            desc.validate()?;
            if backends.contains_key(&desc.id) {
                return Err(Error::Config(format!("duplicate backend id '{}'", desc.id)));
            }
            let driver = match &desc.endpoint {
                Endpoint::Mock { fixtures } => Driver::Mock(MockDriver::load(fixtures)?),
                Endpoint::OpenAiChat { timeout_secs, .. } => Driver::Http(HttpDriver::new(
                    timeout_secs.unwrap_or(DEFAULT_HTTP_TIMEOUT_SECS),
                )?),
            };
            let gate = desc.max_in_flight.map(Semaphore::new);
            backends.insert(desc.id.clone(), Backend { desc, driver, gate });
        }
        Ok(Gateway { backends, ledger: TokenLedger::new(), calls: AtomicU64::new(0) })
    }

    pub fn has_backend(&self, id: &str) -> bool {
        self.backends.contains_key(id)
    }

    pub fn descriptor(&self, id: &str) -> Option<&BackendDescriptor> {
        self.backends.get(id).map(|b| &b.desc)
    }

    pub fn descriptors(&self) -> Vec<BackendDescriptor> {
        self.backends.values().map(|b| b.desc.clone()).collect()
    }

    pub fn ledger(&self) -> &TokenLedger {
        &self.ledger
    }

    /// Seed the ledger from a previous run (resume path).
    pub fn restore_ledger(&mut self, snapshot: LedgerSnapshot) {
        self.ledger = TokenLedger::from_snapshot(snapshot);
    }

    /// Total completed calls, every backend. Resume tests assert this
    /// stays zero on a fully cached rerun.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Send one request. Modality is checked up front, transport failures
    /// retried up to the backend's budget, usage recorded atomically.
    pub fn complete(&self, backend_id: &str, req: &ModelRequest) -> Result<ModelResponse> {
        if req.role_tag.is_empty() {
            return Err(Error::Contract("role_tag must be non-empty".into()));
        }
        let backend = self
            .backends
            .get(backend_id)
            .ok_or_else(|| Error::Config(format!("unknown backend '{backend_id}'")))?;
        match backend.desc.modality {
            Modality::Text if !req.images.is_empty() => {
                return Err(Error::Contract(format!(
                    "request '{}' carries {} image(s) but backend '{}' is text-only",
                    req.role_tag,
                    req.images.len(),
                    backend_id
                )));
            }
            Modality::Vision if req.images.is_empty() => {
                return Err(Error::Contract(format!(
                    "request '{}' has no images but backend '{}' is a vision backend",
                    req.role_tag, backend_id
                )));
            }
            _ => {}
        }

        let _permit = backend.gate.as_ref().map(|g| g.acquire());
        let mut last_err = None;
        for attempt in 0..=backend.desc.max_retries {
            match backend.driver.call(&backend.desc, req) {
                Ok(reply) => return Ok(self.finish(backend, req, reply)),
                Err(e @ Error::BackendUnavailable { .. }) => {
                    log::warn!(
                        "backend '{}' attempt {}/{} failed: {e}",
                        backend_id,
                        attempt + 1,
                        backend.desc.max_retries + 1
                    );
                    last_err = Some(e);
                    std::thread::sleep(std::time::Duration::from_millis(
                        50u64.saturating_mul(1 << attempt.min(6)),
                    ));
                }
                Err(other) => return Err(other),
            }
        }
        Err(last_err.unwrap_or_else(|| Error::BackendUnavailable {
            backend: backend_id.to_string(),
            detail: "no attempts made".into(),
        }))
    }

    fn finish(&self, backend: &Backend, req: &ModelRequest, reply: DriverReply) -> ModelResponse {
        let usage = reply.usage.unwrap_or_else(|| estimate_usage(&backend.desc, req, &reply.text));
        self.ledger.record(&backend.desc.id, &req.role_tag, usage);
        self.calls.fetch_add(1, Ordering::Relaxed);
        ModelResponse { text: reply.text, usage }
    }

    /// Structured-output call: parse + schema-validate, and on failure
    /// reprompt once with the error appended, then fail for good.
    pub fn complete_json(
        &self,
        backend_id: &str,
        req: &ModelRequest,
        schema: SchemaId,
    ) -> Result<serde_json::Value> {
        let req = req.clone().expecting_json();
        let first = self.complete(backend_id, &req)?;
        match schemas::extract_json(&first.text, schema) {
            Ok(value) => Ok(value),
            Err(first_err) => {
                let mut retry = req.clone();
                retry.user_prompt = format!(
                    "{}\n\nYour previous reply was invalid: {first_err}\n\
                     Return only the corrected JSON object, nothing else.",
                    req.user_prompt
                );
                let second = self.complete(backend_id, &retry)?;
                schemas::extract_json(&second.text, schema)
            }
        }
    }
}

/// Deterministic local usage estimate for endpoints that report none:
/// 4 characters per token on each side, plus a flat per-image charge on the
/// vision input lane.
fn estimate_usage(desc: &BackendDescriptor, req: &ModelRequest, response: &str) -> TokenUsage {
    let prompt_chars = req.system_prompt.len() + req.user_prompt.len();
    let prompt = (prompt_chars as u64).div_ceil(4);
    let completion = (response.len() as u64).div_ceil(4);
    match desc.modality {
        Modality::Text => TokenUsage::text(prompt, completion),
        Modality::Vision => TokenUsage::vision(
            prompt + desc.vision_tokens_per_image * req.images.len() as u64,
            completion,
        ),
    }
}

/// Minimal counting semaphore; std has no stable one and the need here is
/// a plain in-flight cap.
struct Semaphore {
    state: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore { state: Mutex::new(permits.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut available = self.state.lock().expect("semaphore poisoned");
        while *available == 0 {
            available = self.cv.wait(available).expect("semaphore poisoned");
        }
        *available -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut available = self.0.state.lock().expect("semaphore poisoned");
        *available += 1;
        self.0.cv.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn mock_gateway(fixtures: serde_json::Value, modality: Modality) -> (Gateway, tempfile::TempDir) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixtures.json");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(fixtures.to_string().as_bytes()).unwrap();
        let desc = BackendDescriptor {
            id: "mock".into(),
            modality,
            endpoint: Endpoint::Mock { fixtures: path },
            price_in: 0.0,
            price_out: 0.0,
            max_retries: 1,
            max_in_flight: Some(2),
            vision_tokens_per_image: 765,
        };
        (Gateway::new(vec![desc]).unwrap(), dir)
    }

    fn png_fixture(dir: &std::path::Path) -> PathBuf {
        let path = dir.join("img.png");
        let img = image::RgbImage::from_pixel(4, 4, image::Rgb([255, 0, 0]));
        img.save(&path).unwrap();
        path
    }

    #[test]
    fn scripted_fixture_round_trip() {
        let (gw, _dir) =
            mock_gateway(serde_json::json!({"commenter.critique": "3"}), Modality::Text);
        let req = ModelRequest::text("commenter.critique", "sys", "user".into());
        let resp = gw.complete("mock", &req).unwrap();
        assert_eq!(resp.text, "3");
        assert!(resp.usage.is_zero());
        assert_eq!(gw.call_count(), 1);
    }

    #[test]
    fn sequences_advance_and_stick() {
        let (gw, _dir) =
            mock_gateway(serde_json::json!({"commenter.critique": ["1", "2", "3"]}), Modality::Text);
        let req = ModelRequest::text("commenter.critique", "sys", "user".into());
        let texts: Vec<String> =
            (0..5).map(|_| gw.complete("mock", &req).unwrap().text).collect();
        assert_eq!(texts, ["1", "2", "3", "3", "3"]);
    }

    #[test]
    fn images_to_text_backend_is_contract_error() {
        let (gw, dir) = mock_gateway(serde_json::json!({"judge.clarity": "x"}), Modality::Text);
        let img = png_fixture(dir.path());
        let req = ModelRequest::vision("judge.clarity", "sys", "user".into(), vec![img]);
        assert!(matches!(gw.complete("mock", &req), Err(Error::Contract(_))));
    }

    #[test]
    fn vision_backend_requires_images() {
        let (gw, _dir) = mock_gateway(serde_json::json!({"judge.clarity": "x"}), Modality::Vision);
        let req = ModelRequest::text("judge.clarity", "sys", "user".into());
        assert!(matches!(gw.complete("mock", &req), Err(Error::Contract(_))));
    }

    #[test]
    fn fixture_usage_is_recorded_per_backend_and_role() {
        let fixtures = serde_json::json!({
            "parser.summarize": {"text": "{}", "usage": {"in_t": 10, "out_t": 5}}
        });
        let (gw, _dir) = mock_gateway(fixtures, Modality::Text);
        let req = ModelRequest::text("parser.summarize", "sys", "user".into());
        gw.complete("mock", &req).unwrap();
        gw.complete("mock", &req).unwrap();
        let total = gw.ledger().grand_total();
        assert_eq!((total.in_t, total.out_t), (20, 10));
        assert_eq!(gw.ledger().per_role()["parser.summarize"].in_t, 20);
    }

    #[test]
    fn missing_fixture_is_config_error() {
        let (gw, _dir) = mock_gateway(serde_json::json!({}), Modality::Text);
        let req = ModelRequest::text("parser.summarize", "sys", "user".into());
        assert!(matches!(gw.complete("mock", &req), Err(Error::Config(_))));
    }

    #[test]
    fn prompt_hash_pins_override_role_fallback() {
        let req = ModelRequest::text("painter.compose", "sys", "special".into());
        let hash = prompt_hash(&req);
        let fixtures = serde_json::json!({
            "painter.compose": "generic",
            format!("painter.compose@{hash}"): "pinned",
        });
        let (gw, _dir) = mock_gateway(fixtures, Modality::Text);
        assert_eq!(gw.complete("mock", &req).unwrap().text, "pinned");
        let other = ModelRequest::text("painter.compose", "sys", "other".into());
        assert_eq!(gw.complete("mock", &other).unwrap().text, "generic");
    }

    #[test]
    fn mock_is_deterministic_across_gateways() {
        let fixtures = serde_json::json!({"planner.match": ["{\"A\": 1}", "{\"B\": 2}"]});
        let run = || {
            let (gw, _dir) = mock_gateway(fixtures.clone(), Modality::Text);
            let req = ModelRequest::text("planner.match", "s", "u".into());
            (gw.complete("mock", &req).unwrap().text, gw.complete("mock", &req).unwrap().text)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn estimate_charges_vision_lane_per_image() {
        let desc = BackendDescriptor {
            id: "v".into(),
            modality: Modality::Vision,
            endpoint: Endpoint::Mock { fixtures: "unused".into() },
            price_in: 0.0,
            price_out: 0.0,
            max_retries: 0,
            max_in_flight: None,
            vision_tokens_per_image: 765,
        };
        let req = ModelRequest {
            role_tag: "judge.clarity".into(),
            system_prompt: "abcd".into(),
            user_prompt: "efgh".into(),
            images: vec!["a.png".into(), "b.png".into()],
            expect_json: false,
        };
        let usage = estimate_usage(&desc, &req, "12345678");
        assert_eq!(usage.in_v, 2 + 2 * 765);
        assert_eq!(usage.out_v, 2);
        assert_eq!(usage.in_t + usage.out_t, 0);
    }

    #[test]
    fn gateway_is_safe_under_concurrent_calls() {
        let fixtures = serde_json::json!({
            "painter.compose": {"text": "ok", "usage": {"in_t": 1, "out_t": 1}}
        });
        let (gw, _dir) = mock_gateway(fixtures, Modality::Text);
        std::thread::scope(|scope| {
            for _ in 0..8 {
                scope.spawn(|| {
                    let req = ModelRequest::text("painter.compose", "s", "u".into());
                    for _ in 0..25 {
                        gw.complete("mock", &req).unwrap();
                    }
                });
            }
        });
        let total = gw.ledger().grand_total();
        assert_eq!((total.in_t, total.out_t), (200, 200));
        assert_eq!(gw.call_count(), 200);
    }
}
