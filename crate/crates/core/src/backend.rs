//! Shared plumbing for remote model-serving backends: error taxonomy, bounded
//! retry with exponential backoff, and a small blocking JSON-over-HTTP client.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    /// Connection failure, timeout or non-2xx status. `body` preserves
    /// whatever the server sent back.
    #[error("transport error calling {endpoint}: {message}")]
    Transport {
        endpoint: String,
        status: Option<u16>,
        message: String,
        body: String,
    },

    /// The backend answered but the payload violates the protocol.
    /// Never retried.
    #[error("malformed reply from {endpoint}: {reason} (payload: {payload})")]
    Malformed {
        endpoint: String,
        reason: String,
        payload: String,
    },

    #[error("{endpoint} failed after {attempts} attempts: {last}")]
    Exhausted {
        endpoint: String,
        attempts: u32,
        #[source]
        last: Box<BackendError>,
    },
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            // 4xx other than 408/429 means the request itself is wrong.
            BackendError::Transport { status: Some(s), .. } => {
                !(400..500).contains(s) || *s == 408 || *s == 429
            }
            BackendError::Transport { status: None, .. } => true,
            BackendError::Malformed { .. } | BackendError::Exhausted { .. } => false,
        }
    }

    pub fn malformed(endpoint: impl Into<String>, reason: impl Into<String>, payload: impl Into<String>) -> Self {
        let mut payload = payload.into();
        if payload.len() > 512 {
            let mut cut = 512;
            while !payload.is_char_boundary(cut) {
                cut -= 1;
            }
            payload.truncate(cut);
            payload.push_str("...");
        }
        BackendError::Malformed {
            endpoint: endpoint.into(),
            reason: reason.into(),
            payload,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            initial_backoff_ms: 100,
            max_backoff_ms: 2_000,
        }
    }
}

impl RetryPolicy {
    pub fn no_backoff(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            initial_backoff_ms: 0,
            max_backoff_ms: 0,
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }
}

/// Run `op` until it succeeds, returns a non-retryable error, or the attempt
/// budget is spent.
pub fn with_retry<T>(
    policy: &RetryPolicy,
    endpoint: &str,
    mut op: impl FnMut() -> Result<T, BackendError>,
) -> Result<T, BackendError> {
    let attempts = policy.max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        match op() {
            Ok(v) => return Ok(v),
            Err(e) if !e.is_retryable() => return Err(e),
            Err(e) if attempt >= attempts => {
                return Err(BackendError::Exhausted {
                    endpoint: endpoint.to_string(),
                    attempts: attempt,
                    last: Box::new(e),
                })
            }
            Err(e) => {
                log::debug!("{endpoint}: attempt {attempt} failed ({e}), retrying");
                thread::sleep(policy.backoff(attempt));
            }
        }
    }
}

/// Blocking JSON client for one base URL. Safe to share between threads.
#[derive(Clone)]
pub struct JsonClient {
    base_url: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl std::fmt::Debug for JsonClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonClient")
            .field("base_url", &self.base_url)
            .field("retry", &self.retry)
            .finish()
    }
}

impl JsonClient {
    pub fn new(base_url: impl Into<String>, retry: RetryPolicy, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
            retry,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// POST `body` to `path`, decode the JSON reply. Retries transport
    /// failures; a reply that does not decode is `Malformed`.
    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, BackendError> {
        let url = format!("{}{}", self.base_url, path);
        let payload = serde_json::to_string(body).map_err(|e| BackendError::malformed(&url, e.to_string(), ""))?;
        let text = with_retry(&self.retry, &url, || self.post_once(&url, &payload))?;
        serde_json::from_str(&text).map_err(|e| BackendError::malformed(&url, e.to_string(), text))
    }

    fn post_once(&self, url: &str, payload: &str) -> Result<String, BackendError> {
        let transport = |status: Option<u16>, message: String, body: String| BackendError::Transport {
            endpoint: url.to_string(),
            status,
            message,
            body,
        };
        let mut resp = self
            .agent
            .post(url)
            .header("content-type", "application/json")
            .send(payload)
            .map_err(|e| transport(None, e.to_string(), String::new()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| transport(Some(status), e.to_string(), String::new()))?;
        if !(200..300).contains(&status) {
            return Err(transport(Some(status), format!("HTTP {status}"), body));
        }
        Ok(body)
    }
}
