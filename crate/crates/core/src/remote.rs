//! HTTP client for the inference sidecar.
//!
//! Wire protocol (JSON over HTTP/1.1):
//!
//! ```text
//! GET  /v1/info   -> {"model": str, "label_order": [str; 3], "max_batch": int, "max_tokens": int}
//! POST /v1/score  <- {"model": str, "pairs": [{"premise": str, "hypothesis": str}, ...]}
//!                 -> {"scores": [{"entailment": f, "neutral": f, "contradiction": f}, ...]}
//! ```
//!
//! Scores are matched to classes by name. Batches larger than the server's
//! `max_batch` are split client-side. Transport failures, 429 and 5xx are
//! retried with exponential backoff; 400, 409 and 413 are not.

use std::collections::HashSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nli::{NliBackend, ScoreRequest, ScoreTriple};

/// Environment variable that may supply the sidecar endpoint.
pub const ENDPOINT_ENV: &str = "ZSL_EMOTION_ENDPOINT";

const CLASS_NAMES: [&str; 3] = ["entailment", "neutral", "contradiction"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based): `base * 2^attempt`.
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerInfo {
    pub model: String,
    #[serde(alias = "label-order")]
    pub label_order: Vec<String>,
    #[serde(alias = "max-batch")]
    pub max_batch: usize,
    #[serde(alias = "max-tokens")]
    pub max_tokens: usize,
}

impl ServerInfo {
    fn validate(&self, expected_model: &str) -> Result<()> {
        if self.model != expected_model {
            return Err(Error::Protocol(format!(
                "sidecar serves `{}`, expected `{expected_model}`",
                self.model
            )));
        }
        let names: HashSet<&str> = self.label_order.iter().map(String::as_str).collect();
        if self.label_order.len() != 3
            || names.len() != 3
            || !CLASS_NAMES.iter().all(|n| names.contains(n))
        {
            return Err(Error::Protocol(format!(
                "bad label order {:?}",
                self.label_order
            )));
        }
        if self.max_batch == 0 || self.max_tokens == 0 {
            return Err(Error::Protocol(
                "max_batch and max_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    pairs: &'a [ScoreRequest],
}

#[derive(Deserialize)]
struct WireResponse {
    scores: Vec<ScoreTriple>,
}

enum Attempt<T> {
    Done(T),
    Retry(Error),
    Fail(Error),
}

pub struct RemoteBackend {
    endpoint: String,
    model_id: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
    info: ServerInfo,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.endpoint)
            .field("model_id", &self.model_id)
            .field("info", &self.info)
            .finish()
    }
}

impl RemoteBackend {
    /// Connects to the sidecar and checks that it serves `model_id`.
    pub fn connect(
        endpoint: &str,
        model_id: &str,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Result<Self> {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let mut backend = Self {
            endpoint,
            model_id: model_id.to_string(),
            agent,
            retry,
            info: ServerInfo {
                model: String::new(),
                label_order: vec![],
                max_batch: 1,
                max_tokens: 1,
            },
        };
        let info: ServerInfo = backend.with_retries(|b| b.get_info())?;
        info.validate(model_id)?;
        backend.info = info;
        Ok(backend)
    }

    pub fn info(&self) -> &ServerInfo {
        &self.info
    }

    fn with_retries<T>(&self, mut op: impl FnMut(&Self) -> Attempt<T>) -> Result<T> {
        let mut attempt = 0;
        loop {
            match op(self) {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) if attempt >= self.retry.max_retries => return Err(e),
                Attempt::Retry(e) => {
                    let delay = self.retry.delay(attempt);
                    log::warn!("sidecar call failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }

    fn classify(
        &self,
        result: std::result::Result<ureq::Response, ureq::Error>,
    ) -> Attempt<ureq::Response> {
        match result {
            Ok(resp) => Attempt::Done(resp),
            Err(ureq::Error::Transport(t)) => Attempt::Retry(Error::BackendUnreachable {
                endpoint: self.endpoint.clone(),
                reason: t.to_string(),
            }),
            Err(ureq::Error::Status(code, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                let msg = format!("HTTP {code}: {}", body.trim());
                match code {
                    413 => Attempt::Fail(Error::OversizedInput(msg)),
                    429 | 500..=599 => Attempt::Retry(Error::Protocol(msg)),
                    _ => Attempt::Fail(Error::Protocol(msg)),
                }
            }
        }
    }

    fn get_info(&self) -> Attempt<ServerInfo> {
        let url = format!("{}/v1/info", self.endpoint);
        match self.classify(self.agent.get(&url).call()) {
            Attempt::Done(resp) => match resp.into_json::<ServerInfo>() {
                Ok(info) => Attempt::Done(info),
                Err(e) => Attempt::Fail(Error::Protocol(format!("bad /v1/info body: {e}"))),
            },
            Attempt::Retry(e) => Attempt::Retry(e),
            Attempt::Fail(e) => Attempt::Fail(e),
        }
    }

    fn post_score(&self, pairs: &[ScoreRequest]) -> Attempt<Vec<ScoreTriple>> {
        let url = format!("{}/v1/score", self.endpoint);
        let body = WireRequest {
            model: &self.model_id,
            pairs,
        };
        match self.classify(self.agent.post(&url).send_json(&body)) {
            Attempt::Done(resp) => match resp.into_json::<WireResponse>() {
                Ok(r) if r.scores.len() == pairs.len() => Attempt::Done(r.scores),
                Ok(r) => Attempt::Fail(Error::Protocol(format!(
                    "{} scores for {} pairs",
                    r.scores.len(),
                    pairs.len()
                ))),
                Err(e) => Attempt::Fail(Error::Protocol(format!("bad /v1/score body: {e}"))),
            },
            Attempt::Retry(e) => Attempt::Retry(e),
            Attempt::Fail(e) => Attempt::Fail(e),
        }
    }
}

impl NliBackend for RemoteBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score_batch(&self, batch: &[ScoreRequest]) -> Result<Vec<ScoreTriple>> {
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(self.info.max_batch) {
            let triples = self.with_retries(|b| b.post_score(chunk))?;
            for t in &triples {
                t.validate()
                    .map_err(|e| Error::Protocol(format!("sidecar returned {e}")))?;
            }
            out.extend(triples);
        }
        Ok(out)
    }
}
