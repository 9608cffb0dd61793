//! Provider profiles, the completion interface, and the HTTP adapters.

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiKind {
    /// `POST` with `{model, messages, temperature}`, answer in
    /// `choices[0].message.content`, bearer auth.
    OpenaiChat,
    /// `POST` with `{model, max_tokens, messages, temperature}`, answer in
    /// `content[0].text`, `x-api-key` auth.
    AnthropicMessages,
}

fn default_temperature() -> f64 {
    0.0
}
fn default_retries() -> u32 {
    3
}
fn default_timeout() -> f64 {
    120.0
}
fn default_rpm() -> u32 {
    30
}
fn default_backoff() -> u64 {
    1000
}
fn default_max_tokens() -> u32 {
    1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderProfile {
    pub provider_id: String,
    pub model_id: String,
    pub endpoint: String,
    pub api: ApiKind,
    /// Name of the environment variable holding the credential.
    pub auth_env: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_rpm")]
    pub requests_per_minute: u32,
    /// First retry delay; doubles on every further attempt.
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

impl ProviderProfile {
    pub fn validate(&self) -> Result<(), String> {
        if self.provider_id.is_empty() || self.provider_id.contains(['/', '\t', '\n']) {
            return Err(format!("invalid provider_id {:?}", self.provider_id));
        }
        if self.model_id.is_empty() {
            return Err(format!("{}: empty model_id", self.provider_id));
        }
        reqwest::Url::parse(&self.endpoint)
            .map_err(|e| format!("{}: bad endpoint {}: {e}", self.provider_id, self.endpoint))?;
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!("{}: temperature must be >= 0", self.provider_id));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(format!("{}: timeout must be positive", self.provider_id));
        }
        if self.requests_per_minute == 0 {
            return Err(format!("{}: requests_per_minute must be positive", self.provider_id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionRequest {
    pub model_id: String,
    pub prompt: String,
    pub temperature_bits: u64,
}

impl CompletionRequest {
    pub fn new(model_id: &str, prompt: String, temperature: f64) -> Self {
        Self {
            model_id: model_id.to_string(),
            prompt,
            temperature_bits: temperature.to_bits(),
        }
    }

    pub fn temperature(&self) -> f64 {
        f64::from_bits(self.temperature_bits)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response shape: {0}")]
    BadResponse(String),
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
}

impl ProviderError {
    pub fn retryable(&self) -> bool {
        match self {
            ProviderError::Timeout | ProviderError::Transport(_) => true,
            ProviderError::Status { status, .. } => *status == 429 || *status >= 500,
            ProviderError::BadResponse(_) | ProviderError::MissingCredential(_) => false,
        }
    }
}

/// One chat-style completion call. Adapters translate to a provider's wire
/// format.
pub trait CompletionProvider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError>;
}

pub struct HttpProvider {
    profile: ProviderProfile,
    credential: String,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    /// Reads the credential from the profile's environment variable.
    pub fn from_env(profile: &ProviderProfile) -> Result<Self, ProviderError> {
        let credential = std::env::var(&profile.auth_env)
            .map_err(|_| ProviderError::MissingCredential(profile.auth_env.clone()))?;
        Self::with_credential(profile, credential)
    }

    pub fn with_credential(
        profile: &ProviderProfile,
        credential: String,
    ) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(profile.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(Self {
            profile: profile.clone(),
            credential,
            client,
        })
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        let messages = json!([{ "role": "user", "content": request.prompt }]);
        match self.profile.api {
            ApiKind::OpenaiChat => json!({
                "model": request.model_id,
                "messages": messages,
                "temperature": request.temperature(),
            }),
            ApiKind::AnthropicMessages => json!({
                "model": request.model_id,
                "max_tokens": self.profile.max_tokens,
                "messages": messages,
                "temperature": request.temperature(),
            }),
        }
    }
}

pub(crate) fn extract_text(api: &ApiKind, v: &Value) -> Result<String, ProviderError> {
    let text = match api {
        ApiKind::OpenaiChat => v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str),
        ApiKind::AnthropicMessages => v.pointer("/content/0/text").and_then(Value::as_str),
    };
    text.map(str::to_string)
        .ok_or_else(|| ProviderError::BadResponse("no completion text in response".into()))
}

impl CompletionProvider for HttpProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let mut req = self
            .client
            .post(&self.profile.endpoint)
            .header("content-type", "application/json")
            .body(self.body(request).to_string());
        req = match self.profile.api {
            ApiKind::OpenaiChat => req.bearer_auth(&self.credential),
            ApiKind::AnthropicMessages => req
                .header("x-api-key", &self.credential)
                .header("anthropic-version", "2023-06-01"),
        };
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout
            } else {
                ProviderError::Transport(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout
            } else {
                ProviderError::Transport(e.to_string())
            }
        })?;
        if !(200..300).contains(&status) {
            let body: String = text.chars().take(500).collect();
            return Err(ProviderError::Status { status, body });
        }
        let v: Value =
            serde_json::from_str(&text).map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        extract_text(&self.profile.api, &v)
    }
}

/// Spaces request starts at least `60 / requests_per_minute` seconds apart.
#[derive(Debug)]
pub(crate) struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub(crate) fn per_minute(rpm: u32) -> Self {
        Self {
            interval: Duration::from_secs_f64(60.0 / f64::from(rpm.max(1))),
            next: Mutex::new(None),
        }
    }

    pub(crate) fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let start = next.map_or(now, |t| t.max(now));
            *next = Some(start + self.interval);
            start.saturating_duration_since(now)
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

/// Issues `request` with up to `profile.max_retries` retries on transient
/// errors, doubling the delay each time.
pub(crate) fn complete_with_retry(
    provider: &dyn CompletionProvider,
    profile: &ProviderProfile,
    limiter: &RateLimiter,
    request: &CompletionRequest,
) -> Result<String, ProviderError> {
    let mut attempt = 0u32;
    loop {
        limiter.acquire();
        match provider.complete(request) {
            Ok(text) => return Ok(text),
            Err(e) if e.retryable() && attempt < profile.max_retries => {
                let delay = profile
                    .backoff_base_ms
                    .saturating_mul(1u64 << attempt.min(20));
                warn!(
                    "{}: attempt {} failed ({e}); retrying in {delay} ms",
                    profile.provider_id,
                    attempt + 1
                );
                thread::sleep(Duration::from_millis(delay));
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicU32, Ordering};

    pub(crate) fn profile(id: &str) -> ProviderProfile {
        ProviderProfile {
            provider_id: id.into(),
            model_id: "model-x".into(),
            endpoint: "http://127.0.0.1:9/v1/chat/completions".into(),
            api: ApiKind::OpenaiChat,
            auth_env: "REFSOURCE_TEST_KEY".into(),
            temperature: 0.0,
            max_retries: 2,
            timeout_secs: 5.0,
            requests_per_minute: 60_000,
            backoff_base_ms: 0,
            max_tokens: 256,
        }
    }

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
        error: ProviderError,
    }

    impl CompletionProvider for Flaky {
        fn complete(&self, _: &CompletionRequest) -> Result<String, ProviderError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(self.error.clone())
            } else {
                Ok("{}".into())
            }
        }
    }

    #[test]
    fn retries_transient_errors() {
        let p = profile("a");
        let limiter = RateLimiter::per_minute(p.requests_per_minute);
        let req = CompletionRequest::new("m", "hi".into(), 0.0);
        let flaky = Flaky {
            failures: 2,
            calls: AtomicU32::new(0),
            error: ProviderError::Timeout,
        };
        assert_eq!(complete_with_retry(&flaky, &p, &limiter, &req).unwrap(), "{}");
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);

        let exhausted = Flaky {
            failures: 3,
            calls: AtomicU32::new(0),
            error: ProviderError::Status { status: 503, body: String::new() },
        };
        assert!(complete_with_retry(&exhausted, &p, &limiter, &req).is_err());
        assert_eq!(exhausted.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let p = profile("a");
        let limiter = RateLimiter::per_minute(p.requests_per_minute);
        let req = CompletionRequest::new("m", "hi".into(), 0.0);
        let bad = Flaky {
            failures: 5,
            calls: AtomicU32::new(0),
            error: ProviderError::Status { status: 401, body: String::new() },
        };
        assert!(complete_with_retry(&bad, &p, &limiter, &req).is_err());
        assert_eq!(bad.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let limiter = RateLimiter::per_minute(1200); // 50 ms apart
        let t0 = Instant::now();
        for _ in 0..3 {
            limiter.acquire();
        }
        assert!(t0.elapsed() >= Duration::from_millis(95));
    }

    #[test]
    fn profile_validation() {
        assert!(profile("a").validate().is_ok());
        let mut p = profile("a/b");
        assert!(p.validate().is_err());
        p = profile("a");
        p.endpoint = "not a url".into();
        assert!(p.validate().is_err());
        p = profile("a");
        p.temperature = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn response_shapes() {
        let openai = json!({"choices": [{"message": {"content": "{\"1\": 0.5}"}}]});
        assert_eq!(extract_text(&ApiKind::OpenaiChat, &openai).unwrap(), "{\"1\": 0.5}");
        let anthropic = json!({"content": [{"type": "text", "text": "ok"}]});
        assert_eq!(extract_text(&ApiKind::AnthropicMessages, &anthropic).unwrap(), "ok");
        assert!(extract_text(&ApiKind::OpenaiChat, &anthropic).is_err());
    }

    /// Serves one canned HTTP response and returns the request it received.
    fn one_shot_server(status: &str, body: &str) -> (String, thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let response = format!(
            "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        );
        let handle = thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            stream.write_all(response.as_bytes()).unwrap();
            head + &String::from_utf8(body).unwrap()
        });
        (format!("http://{addr}/v1/chat/completions"), handle)
    }

    #[test]
    fn openai_adapter_round_trip() {
        let (url, server) =
            one_shot_server("200 OK", r#"{"choices":[{"message":{"content":"{\"2\": 0.9}"}}]}"#);
        let mut p = profile("a");
        p.endpoint = url;
        let provider = HttpProvider::with_credential(&p, "sekret".into()).unwrap();
        let text = provider
            .complete(&CompletionRequest::new("model-x", "PROMPT".into(), 0.0))
            .unwrap();
        assert_eq!(text, "{\"2\": 0.9}");
        let seen = server.join().unwrap();
        assert!(seen.starts_with("POST /v1/chat/completions"));
        assert!(seen.to_ascii_lowercase().contains("authorization: bearer sekret"));
        let body: Value = serde_json::from_str(seen.split("\r\n\r\n").nth(1).unwrap()).unwrap();
        assert_eq!(body["model"], "model-x");
        assert_eq!(body["messages"][0]["content"], "PROMPT");
        assert_eq!(body["temperature"], 0.0);
    }

    #[test]
    fn anthropic_adapter_and_status_errors() {
        let (url, server) = one_shot_server("429 Too Many Requests", r#"{"error":"slow down"}"#);
        let mut p = profile("c");
        p.api = ApiKind::AnthropicMessages;
        p.endpoint = url;
        let provider = HttpProvider::with_credential(&p, "k".into()).unwrap();
        let err = provider
            .complete(&CompletionRequest::new("model-x", "P".into(), 0.0))
            .unwrap_err();
        assert!(matches!(err, ProviderError::Status { status: 429, .. }));
        assert!(err.retryable());
        let seen = server.join().unwrap();
        assert!(seen.to_ascii_lowercase().contains("x-api-key: k"));
        assert!(seen.contains("\"max_tokens\":256"));
    }

    #[test]
    fn missing_credential() {
        let mut p = profile("a");
        p.auth_env = "REFSOURCE_DEFINITELY_UNSET_VAR".into();
        assert!(matches!(
            HttpProvider::from_env(&p),
            Err(ProviderError::MissingCredential(_))
        ));
    }
}
