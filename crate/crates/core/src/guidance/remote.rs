//! HTTP client for the guidance service.

use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{
    self, EmbedKind, EmbedRequest, EmbedResponse, HealthResponse, LpipsNet, LpipsRequest, LpipsResponse, PredictRequest,
    PredictResponse,
};
use super::{GuidanceBackend, GuidanceError, GuidanceRequest, GuidanceResponse, HealthReport};

pub const HEALTH_TIMEOUT: Duration = Duration::from_secs(5);
const REQUEST_TIMEOUT: Duration = Duration::from_secs(300);
const MAX_BODY_BYTES: u64 = 512 * 1024 * 1024;

/// Transport failures and 5xx/429 responses are retried with exponential
/// backoff; other HTTP errors are returned at once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: usize,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, initial_backoff: Duration::from_millis(250) }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteClient {
    base: String,
    agent: ureq::Agent,
    health_agent: ureq::Agent,
    retry: RetryPolicy,
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

enum Attempt<T> {
    Done(T),
    Retry(String),
    Fatal(GuidanceError),
}

impl RemoteClient {
    /// `endpoint` is the service base URL, e.g. `http://127.0.0.1:8000`.
    pub fn new(endpoint: &str) -> Result<Self, GuidanceError> {
        let base = endpoint.trim_end_matches('/').to_string();
        if !base.starts_with("http://") {
            return Err(GuidanceError::InvalidRequest(format!("endpoint must be an http:// URL, got {endpoint:?}")));
        }
        Ok(Self { base, agent: agent(REQUEST_TIMEOUT), health_agent: agent(HEALTH_TIMEOUT), retry: RetryPolicy::default() })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.agent = agent(timeout);
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    fn attempt<Req: Serialize, Resp: DeserializeOwned>(&self, url: &str, body: &Req) -> Attempt<Resp> {
        let mut resp = match self.agent.post(url).send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().with_config().limit(MAX_BODY_BYTES).read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(format!("reading body: {e}")),
        };
        if status >= 500 || status == 429 {
            return Attempt::Retry(format!("HTTP {status}: {}", truncate(&text)));
        }
        if !(200..300).contains(&status) {
            return Attempt::Fatal(GuidanceError::Http { endpoint: url.to_string(), status, body: truncate(&text) });
        }
        match serde_json::from_str(&text) {
            Ok(v) => Attempt::Done(v),
            Err(e) => Attempt::Fatal(GuidanceError::Malformed(format!("{url}: {e}"))),
        }
    }

    fn post_json<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, GuidanceError> {
        let url = format!("{}{path}", self.base);
        let mut backoff = self.retry.initial_backoff;
        let mut last = String::new();
        for attempt in 0..=self.retry.max_retries {
            if attempt > 0 {
                log::warn!("{url}: attempt {attempt} failed ({last}); retrying in {backoff:?}");
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            match self.attempt(&url, body) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(msg) => last = msg,
            }
        }
        Err(GuidanceError::Unreachable { endpoint: url, attempts: self.retry.max_retries + 1, message: last })
    }

    fn embed(&self, req: &EmbedRequest) -> Result<Vec<f64>, GuidanceError> {
        let resp: EmbedResponse = self.post_json(wire::EMBED_PATH, req)?;
        if resp.embedding.len() != resp.dim || resp.dim == 0 {
            return Err(GuidanceError::Malformed(format!(
                "embedding has {} values but dim is {}",
                resp.embedding.len(),
                resp.dim
            )));
        }
        Ok(resp.embedding)
    }

    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>, GuidanceError> {
        self.embed(&EmbedRequest { kind: EmbedKind::Text, text: Some(text.to_string()), image_b64: None, width: None, height: None })
    }

    /// `pixels` is `height × width × 3` in `[0, 1]`.
    pub fn embed_image(&self, width: usize, height: usize, pixels: &[f32]) -> Result<Vec<f64>, GuidanceError> {
        self.embed(&EmbedRequest {
            kind: EmbedKind::Image,
            text: None,
            image_b64: Some(wire::encode_f32(pixels)),
            width: Some(width),
            height: Some(height),
        })
    }

    pub fn lpips(&self, width: usize, height: usize, a: &[f32], b: &[f32], net: LpipsNet) -> Result<f64, GuidanceError> {
        let req = LpipsRequest { image_a_b64: wire::encode_f32(a), image_b_b64: wire::encode_f32(b), width, height, net };
        let resp: LpipsResponse = self.post_json(wire::LPIPS_PATH, &req)?;
        if !resp.value.is_finite() {
            return Err(GuidanceError::Malformed("non-finite LPIPS value".into()));
        }
        Ok(resp.value)
    }
}

fn truncate(text: &str) -> String {
    text.chars().take(200).collect()
}

impl GuidanceBackend for RemoteClient {
    fn predict_residual(&self, req: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        req.validate()?;
        let resp: PredictResponse = self.post_json(wire::PREDICT_PATH, &PredictRequest::from(req))?;
        let resp = resp.decode()?;
        resp.validate_for(req)?;
        Ok(resp)
    }

    /// Single attempt bounded by [`HEALTH_TIMEOUT`].
    fn health_check(&self) -> Result<HealthReport, GuidanceError> {
        let url = format!("{}{}", self.base, wire::HEALTH_PATH);
        let start = Instant::now();
        let unreachable = |message: String| GuidanceError::Unreachable { endpoint: url.clone(), attempts: 1, message };
        let mut resp = self.health_agent.get(&url).call().map_err(|e| unreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| unreachable(e.to_string()))?;
        if status != 200 {
            return Err(GuidanceError::Http { endpoint: url, status, body: truncate(&text) });
        }
        let body: HealthResponse = serde_json::from_str(&text).map_err(|e| GuidanceError::Malformed(e.to_string()))?;
        Ok(HealthReport { ok: body.ok, info: body.info, latency_ms: start.elapsed().as_secs_f64() * 1e3 })
    }
}
