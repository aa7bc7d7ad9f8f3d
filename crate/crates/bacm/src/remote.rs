//! OpenAI-compatible chat-completions backend.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use bacm_core::policy::{Policy, PolicyError, PolicyRequest};
use serde_json::{json, Value};

pub const API_KEY_VAR: &str = "BACM_API_KEY";

/// Counting semaphore bounding concurrent requests across clones.
#[derive(Debug, Clone)]
pub struct InFlightLimit {
    inner: Arc<(Mutex<usize>, Condvar)>,
    max: usize,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        InFlightLimit { inner: Arc::new((Mutex::new(0), Condvar::new())), max: max.max(1) }
    }

    fn acquire(&self) -> Permit<'_> {
        let (lock, cv) = &*self.inner;
        let mut n = lock.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }

    pub fn in_flight(&self) -> usize {
        *self.inner.0.lock().unwrap_or_else(|e| e.into_inner())
    }
}

struct Permit<'a>(&'a InFlightLimit);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let (lock, cv) = &*self.0.inner;
        *lock.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        cv.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct RemoteSettings {
    /// Base URL; `/chat/completions` is appended unless already present.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
}

#[derive(Debug, Clone)]
pub struct RemotePolicy {
    settings: RemoteSettings,
    url: String,
    api_key: String,
    agent: ureq::Agent,
    limit: InFlightLimit,
}

impl RemotePolicy {
    /// Reads the credential from `BACM_API_KEY`; fails before any network
    /// traffic if it is unset or empty.
    pub fn from_env(settings: RemoteSettings, limit: InFlightLimit) -> Result<Self, PolicyError> {
        let key = std::env::var(API_KEY_VAR).unwrap_or_default();
        Self::with_key(settings, key, limit)
    }

    pub fn with_key(settings: RemoteSettings, api_key: String, limit: InFlightLimit) -> Result<Self, PolicyError> {
        if api_key.trim().is_empty() {
            return Err(PolicyError::MissingCredential(API_KEY_VAR.into()));
        }
        let base = settings.endpoint.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") { base.to_string() } else { format!("{base}/chat/completions") };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(settings.timeout))
            .build()
            .into();
        Ok(RemotePolicy { settings, url, api_key, agent, limit })
    }

    fn request_body(&self, request: &PolicyRequest<'_>) -> Value {
        json!({
            "model": self.settings.model,
            "messages": [{"role": "user", "content": request.to_prompt()}],
            "temperature": self.settings.temperature,
            "max_tokens": self.settings.max_tokens,
        })
    }
}

/// Extracts `choices[0].message.content`.
pub fn parse_completion(body: &str) -> Result<String, PolicyError> {
    let v: Value = serde_json::from_str(body).map_err(|e| PolicyError::Backend(format!("invalid JSON reply: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| PolicyError::Backend("reply has no choices[0].message.content".into()))
}

impl Policy for RemotePolicy {
    fn respond(&mut self, request: &PolicyRequest<'_>) -> Result<String, PolicyError> {
        let body = self.request_body(request);
        let _permit = self.limit.acquire();
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| PolicyError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| PolicyError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            log::warn!("{} returned {status}", self.url);
            return Err(PolicyError::Status { status, body: text });
        }
        parse_completion(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> RemoteSettings {
        RemoteSettings {
            endpoint: "http://127.0.0.1:9/v1".into(),
            model: "m".into(),
            temperature: 0.0,
            max_tokens: 16,
            timeout: Duration::from_secs(1),
        }
    }

    #[test]
    fn empty_key_is_rejected() {
        let err = RemotePolicy::with_key(settings(), "  ".into(), InFlightLimit::new(1)).unwrap_err();
        assert!(matches!(err, PolicyError::MissingCredential(ref v) if v == API_KEY_VAR));
        let ok = RemotePolicy::with_key(settings(), "k".into(), InFlightLimit::new(1)).unwrap();
        assert_eq!(ok.url, "http://127.0.0.1:9/v1/chat/completions");
    }

    #[test]
    fn completion_parsing() {
        assert_eq!(parse_completion(r#"{"choices":[{"message":{"content":"hi"}}]}"#).unwrap(), "hi");
        assert!(matches!(parse_completion(r#"{"choices":[]}"#), Err(PolicyError::Backend(_))));
        assert!(matches!(parse_completion("<html>"), Err(PolicyError::Backend(_))));
    }

    #[test]
    fn limit_bounds_concurrency() {
        let limit = InFlightLimit::new(2);
        let peak = Arc::new(Mutex::new(0usize));
        std::thread::scope(|s| {
            for _ in 0..6 {
                let (limit, peak) = (limit.clone(), peak.clone());
                s.spawn(move || {
                    let _p = limit.acquire();
                    let now = limit.in_flight();
                    let mut m = peak.lock().unwrap();
                    *m = (*m).max(now);
                    drop(m);
                    std::thread::sleep(Duration::from_millis(10));
                });
            }
        });
        assert!(*peak.lock().unwrap() <= 2);
        assert_eq!(limit.in_flight(), 0);
    }
}
