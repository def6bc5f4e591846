//! Chat-completion client for hosted models speaking the common
//! `{model, messages, temperature, top_p, max_tokens}` schema.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{whitespace_tokens, LlmBackend, LlmError, LlmRequest, LlmResponse};

pub const API_KEY_VAR: &str = "L2T_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub embedding_model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            embedding_model: "text-embedding-3-small".into(),
            timeout_secs: 120,
            max_retries: 4,
            backoff_base_ms: 500,
            backoff_cap_ms: 16_000,
        }
    }
}

/// JSON POST with retry: transport errors, 429 and 5xx back off
/// exponentially; any other non-2xx status fails at once.
pub struct HttpClient {
    cfg: HttpConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(cfg: HttpConfig, api_key: String) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs.max(1))))
            .build()
            .new_agent();
        Self { cfg, api_key, agent }
    }

    pub fn from_env(cfg: HttpConfig) -> Result<Self, LlmError> {
        let key = std::env::var(API_KEY_VAR)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or(LlmError::MissingApiKey(API_KEY_VAR))?;
        Ok(Self::new(cfg, key))
    }

    pub fn config(&self) -> &HttpConfig {
        &self.cfg
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .cfg
            .backoff_base_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.cfg.backoff_cap_ms);
        Duration::from_millis(ms)
    }

    pub fn post_json(&self, path: &str, body: &Value) -> Result<Value, LlmError> {
        let url = format!("{}/{}", self.cfg.base_url.trim_end_matches('/'), path);
        let mut last = LlmError::Transport("no attempt made".into());
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            let sent = self
                .agent
                .post(&url)
                .header("Authorization", &format!("Bearer {}", self.api_key))
                .send_json(body);
            let mut resp = match sent {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("attempt {attempt} to {url} failed: {e}");
                    last = LlmError::Transport(e.to_string());
                    continue;
                }
            };
            let status = resp.status().as_u16();
            let text = resp
                .body_mut()
                .read_to_string()
                .map_err(|e| LlmError::Transport(e.to_string()));
            match status {
                200..=299 => {
                    let text = text?;
                    return serde_json::from_str(&text)
                        .map_err(|e| LlmError::MalformedProviderReply(format!("{e}: {text}")));
                }
                429 => {
                    log::warn!("rate limited on attempt {attempt}");
                    last = LlmError::RateLimited { attempts: attempt + 1 };
                }
                500..=599 => {
                    last = LlmError::Status {
                        status,
                        body: text.unwrap_or_default(),
                    };
                }
                _ => {
                    return Err(LlmError::Status {
                        status,
                        body: text.unwrap_or_default(),
                    })
                }
            }
        }
        Err(last)
    }
}

pub struct HttpBackend {
    client: HttpClient,
}

impl HttpBackend {
    pub fn new(client: HttpClient) -> Self {
        Self { client }
    }
}

fn parse_chat_reply(v: &Value, prompt: &str) -> Result<LlmResponse, LlmError> {
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::MalformedProviderReply(format!("no choices[0].message.content in {v}")))?
        .to_string();
    let count = |p: &str| v.pointer(p).and_then(Value::as_u64);
    Ok(LlmResponse {
        prompt_tokens: count("/usage/prompt_tokens").unwrap_or_else(|| whitespace_tokens(prompt)),
        completion_tokens: count("/usage/completion_tokens").unwrap_or_else(|| whitespace_tokens(&text)),
        text,
    })
}

impl LlmBackend for HttpBackend {
    fn call(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let body = json!({
            "model": self.client.cfg.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "top_p": req.top_p,
            "max_tokens": req.max_tokens,
        });
        let v = self.client.post_json("chat/completions", &body)?;
        parse_chat_reply(&v, &req.prompt)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::llm::RequestKind;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Serves the given `(status, body)` replies in order, one per
    /// connection, and counts requests.
    pub(crate) fn serve(replies: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        std::thread::spawn(move || {
            for (status, body) in replies {
                let Ok((mut stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0u8; len];
                let _ = reader.read_exact(&mut buf);
                counter.fetch_add(1, Ordering::SeqCst);
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(resp.as_bytes());
            }
        });
        (format!("http://{addr}"), hits)
    }

    fn backend(url: String) -> HttpBackend {
        let cfg = HttpConfig {
            base_url: url,
            max_retries: 3,
            backoff_base_ms: 1,
            backoff_cap_ms: 4,
            timeout_secs: 5,
            ..HttpConfig::default()
        };
        HttpBackend::new(HttpClient::new(cfg, "test-key".into()))
    }

    fn ok_body() -> String {
        r#"{"choices":[{"message":{"content":"2"}}],"usage":{"prompt_tokens":11,"completion_tokens":1}}"#.into()
    }

    fn req() -> LlmRequest {
        LlmRequest::new(RequestKind::Classify, "hello".into(), 0.05, 1.0)
    }

    #[test]
    fn success_reads_usage_fields() {
        let (url, hits) = serve(vec![(200, ok_body())]);
        let r = backend(url).call(&req()).unwrap();
        assert_eq!(r.text, "2");
        assert_eq!((r.prompt_tokens, r.completion_tokens), (11, 1));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn retries_429_and_5xx() {
        let (url, hits) = serve(vec![(429, "{}".into()), (503, "{}".into()), (200, ok_body())]);
        let r = backend(url).call(&req()).unwrap();
        assert_eq!(r.text, "2");
        assert_eq!(hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn never_retries_other_4xx() {
        let (url, hits) = serve(vec![(400, "{\"error\":\"bad\"}".into()), (200, ok_body())]);
        let err = backend(url).call(&req()).unwrap_err();
        assert!(matches!(err, LlmError::Status { status: 400, .. }));
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn persistent_rate_limit_surfaces() {
        let (url, hits) = serve(vec![(429, "{}".into()); 4]);
        let err = backend(url).call(&req()).unwrap_err();
        assert!(matches!(err, LlmError::RateLimited { attempts: 4 }));
        assert_eq!(hits.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn malformed_reply() {
        let (url, _) = serve(vec![(200, "{\"choices\":[]}".into())]);
        assert!(matches!(
            backend(url).call(&req()),
            Err(LlmError::MalformedProviderReply(_))
        ));
    }
}
