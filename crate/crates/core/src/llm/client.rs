//! Chat-completion client with bounded concurrency, a request-rate cap and
//! retries.

use std::collections::VecDeque;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::prompt::{build_prompt, parse_response, PromptSpec, Verdict};
use super::LlmError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// Requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_s: f64,
    pub max_in_flight: usize,
    pub requests_per_minute: usize,
    /// Length of the rate window; one minute outside tests.
    pub rate_window_s: f64,
    /// Sleep before each retry; its length is the retry budget.
    pub retry_backoff_ms: Vec<u64>,
    /// Optional JSONL transcript of every request.
    pub transcript: Option<PathBuf>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            temperature: 0.0,
            max_tokens: 4,
            timeout_s: 30.0,
            max_in_flight: 4,
            requests_per_minute: 60,
            rate_window_s: 60.0,
            retry_backoff_ms: vec![1000, 2000, 4000],
            transcript: None,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_in_flight == 0 || self.requests_per_minute == 0 {
            return Err(LlmError::Config("request caps must be positive".into()));
        }
        if !(self.temperature >= 0.0) || !(self.timeout_s > 0.0) || !(self.rate_window_s > 0.0) {
            return Err(LlmError::Config(
                "temperature, timeout and rate window must be non-negative/positive".into(),
            ));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::Config("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChatReply {
    pub content: String,
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TransportError {
    Status { code: u16, body: String },
    Network(String),
    Decode(String),
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self {
            TransportError::Status { code, .. } => *code == 429 || *code >= 500,
            TransportError::Network(_) => true,
            TransportError::Decode(_) => false,
        }
    }

    fn is_auth(&self) -> bool {
        matches!(
            self,
            TransportError::Status {
                code: 401 | 403,
                ..
            }
        )
    }
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::Status { code, body } => write!(f, "HTTP {code}: {body}"),
            TransportError::Network(e) => write!(f, "network error: {e}"),
            TransportError::Decode(e) => write!(f, "undecodable response: {e}"),
        }
    }
}

/// One blocking request/response exchange.
pub trait ChatTransport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, TransportError>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    api_key: String,
}

impl HttpTransport {
    /// Reads the API key from the configured environment variable.
    pub fn from_config(cfg: &EndpointConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        let api_key = std::env::var(&cfg.api_key_env).map_err(|_| {
            LlmError::Auth(format!(
                "environment variable {} is not set",
                cfg.api_key_env
            ))
        })?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            url: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
            api_key,
        })
    }
}

#[derive(Deserialize)]
struct WireReply {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

/// Extracts the first choice's text and token usage from a response body.
pub(crate) fn decode_reply(body: &str) -> Result<ChatReply, TransportError> {
    let w: WireReply =
        serde_json::from_str(body).map_err(|e| TransportError::Decode(e.to_string()))?;
    let first = w
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| TransportError::Decode("no choices".into()))?;
    Ok(ChatReply {
        content: first.message.content.unwrap_or_default(),
        input_tokens: w.usage.as_ref().and_then(|u| u.prompt_tokens),
        output_tokens: w.usage.as_ref().and_then(|u| u.completion_tokens),
    })
}

impl ChatTransport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, TransportError> {
        let body =
            serde_json::to_string(request).map_err(|e| TransportError::Decode(e.to_string()))?;
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(body.as_str())
            .map_err(|e| TransportError::Network(e.to_string()))?;
        let code = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Network(e.to_string()))?;
        if !(200..300).contains(&code) {
            return Err(TransportError::Status { code, body: text });
        }
        decode_reply(&text)
    }
}

/// Sliding-window limiter: at most `cap` acquisitions in any `window`.
pub struct RateLimiter {
    cap: usize,
    window: Duration,
    stamps: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn new(cap: usize, window: Duration) -> Self {
        Self {
            cap: cap.max(1),
            window,
            stamps: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks until a slot is free, then takes it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut q = self.stamps.lock().expect("limiter lock");
                let now = Instant::now();
                while q
                    .front()
                    .is_some_and(|&t| now.duration_since(t) >= self.window)
                {
                    q.pop_front();
                }
                if q.len() < self.cap {
                    q.push_back(now);
                    return;
                }
                self.window - now.duration_since(*q.front().expect("non-empty"))
            };
            std::thread::sleep(wait);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmVerdict {
    pub verdict: Verdict,
    /// Model text, or the last error description when retries ran out.
    pub raw: String,
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
    /// Send-to-response time of the final attempt.
    pub latency_s: f64,
    pub retries: u32,
}

/// Rough token count used when the endpoint reports no usage.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

fn request_for(cfg: &EndpointConfig, prompt: &str) -> ChatRequest {
    ChatRequest {
        model: cfg.model.clone(),
        messages: vec![Message {
            role: "user".into(),
            content: prompt.to_string(),
        }],
        temperature: cfg.temperature,
        max_tokens: cfg.max_tokens,
    }
}

enum Outcome {
    Done(LlmVerdict),
    Auth(String),
}

fn run_one(
    cfg: &EndpointConfig,
    transport: &dyn ChatTransport,
    limiter: &RateLimiter,
    prompt: &str,
) -> Outcome {
    let req = request_for(cfg, prompt);
    let mut retries = 0u32;
    loop {
        limiter.acquire();
        let start = Instant::now();
        let res = transport.send(&req);
        let latency_s = start.elapsed().as_secs_f64();
        match res {
            Ok(reply) => {
                return Outcome::Done(LlmVerdict {
                    verdict: parse_response(&reply.content),
                    raw: reply.content,
                    input_tokens: reply.input_tokens,
                    output_tokens: reply.output_tokens,
                    latency_s,
                    retries,
                })
            }
            Err(e) if e.is_auth() => return Outcome::Auth(e.to_string()),
            Err(e) => {
                let backoff = cfg.retry_backoff_ms.get(retries as usize);
                match backoff {
                    Some(&ms) if e.retryable() => {
                        log::warn!("request failed ({e}); retry {} in {ms} ms", retries + 1);
                        std::thread::sleep(Duration::from_millis(ms));
                        retries += 1;
                    }
                    _ => {
                        return Outcome::Done(LlmVerdict {
                            verdict: Verdict::Malformed,
                            raw: e.to_string(),
                            input_tokens: None,
                            output_tokens: None,
                            latency_s,
                            retries,
                        })
                    }
                }
            }
        }
    }
}

/// Sends one prompt per `PromptSpec` and returns verdicts in input order.
///
/// At most `max_in_flight` requests are outstanding and at most
/// `requests_per_minute` are started per rate window. A 401/403 aborts the
/// batch.
pub fn predict_batch(
    cfg: &EndpointConfig,
    transport: &dyn ChatTransport,
    specs: &[PromptSpec],
) -> Result<Vec<LlmVerdict>, LlmError> {
    cfg.validate()?;
    let prompts = specs
        .iter()
        .map(build_prompt)
        .collect::<Result<Vec<_>, _>>()?;
    let limiter = RateLimiter::new(
        cfg.requests_per_minute,
        Duration::from_secs_f64(cfg.rate_window_s),
    );
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let auth: Mutex<Option<String>> = Mutex::new(None);
    let results: Vec<Mutex<Option<LlmVerdict>>> =
        prompts.iter().map(|_| Mutex::new(None)).collect();
    let workers = cfg.max_in_flight.min(prompts.len()).max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    return;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(prompt) = prompts.get(i) else { return };
                match run_one(cfg, transport, &limiter, prompt) {
                    Outcome::Done(v) => *results[i].lock().expect("result lock") = Some(v),
                    Outcome::Auth(msg) => {
                        abort.store(true, Ordering::SeqCst);
                        auth.lock().expect("auth lock").get_or_insert(msg);
                        return;
                    }
                }
            });
        }
    });
    if let Some(msg) = auth.into_inner().expect("auth lock") {
        return Err(LlmError::Auth(msg));
    }
    let verdicts: Vec<LlmVerdict> = results
        .into_iter()
        .map(|m| {
            m.into_inner()
                .expect("result lock")
                .expect("every index processed")
        })
        .collect();
    let retries: u32 = verdicts.iter().map(|v| v.retries).sum();
    if retries > 0 {
        log::info!("{retries} retries across {} requests", verdicts.len());
    }
    if let Some(path) = &cfg.transcript {
        append_transcript(path, &prompts, &verdicts)?;
    }
    Ok(verdicts)
}

#[derive(Serialize)]
struct TranscriptLine<'a> {
    index: usize,
    prompt_sha256: String,
    verdict: Verdict,
    raw: &'a str,
    latency_s: f64,
    input_tokens: Option<u64>,
    output_tokens: Option<u64>,
    retries: u32,
}

fn append_transcript(
    path: &PathBuf,
    prompts: &[String],
    verdicts: &[LlmVerdict],
) -> Result<(), LlmError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    for (i, (p, v)) in prompts.iter().zip(verdicts).enumerate() {
        let line = TranscriptLine {
            index: i,
            prompt_sha256: format!("{:x}", Sha256::digest(p.as_bytes())),
            verdict: v.verdict,
            raw: &v.raw,
            latency_s: v.latency_s,
            input_tokens: v.input_tokens,
            output_tokens: v.output_tokens,
            retries: v.retries,
        };
        serde_json::to_writer(&mut f, &line).map_err(std::io::Error::from)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_chat_completion_shape() {
        let r = decode_reply(
            r#"{"choices":[{"message":{"role":"assistant","content":"Yes"}}],"usage":{"prompt_tokens":812,"completion_tokens":1}}"#,
        )
        .unwrap();
        assert_eq!(r.content, "Yes");
        assert_eq!((r.input_tokens, r.output_tokens), (Some(812), Some(1)));
        assert!(decode_reply(r#"{"choices":[]}"#).is_err());
    }

    #[test]
    fn request_serialises_expected_fields() {
        let v = serde_json::to_value(request_for(&EndpointConfig::default(), "hi")).unwrap();
        assert_eq!(v["max_tokens"], 4);
        assert_eq!(v["temperature"], 0.0);
        assert_eq!(v["messages"][0]["role"], "user");
    }

    #[test]
    fn token_estimate() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcde"), 2);
    }

    #[test]
    fn missing_key_is_auth_error() {
        let cfg = EndpointConfig {
            api_key_env: "KT_BENCH_SURELY_UNSET_VAR".into(),
            ..Default::default()
        };
        assert!(matches!(
            HttpTransport::from_config(&cfg),
            Err(LlmError::Auth(_))
        ));
    }
}
