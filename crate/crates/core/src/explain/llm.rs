//! Minimal client for OpenAI-compatible chat-completion endpoints.
//!
//! With no `base_url` configured the client runs offline and answers every
//! query with a deterministic placeholder that embeds the query verbatim.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SYSTEM_PROMPT_VERSION: &str = "system-prompt/1";
pub const SYSTEM_PROMPT: &str =
    "You are a network security analyst. Answer in plain prose and keep the answer short.";
pub const OFFLINE_MODEL: &str = "offline";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("endpoint timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("endpoint returned HTTP {status} after {attempts} attempt(s): {body}")]
    Status { status: u16, body: String, attempts: u32 },
    #[error("malformed completion body: {0}")]
    Malformed(String),
    #[error("transport error after {attempts} attempt(s): {msg}")]
    Transport { msg: String, attempts: u32 },
    #[error("api key variable {0} is not set")]
    MissingApiKey(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// E.g. `http://localhost:8000/v1`. `None` selects offline mode.
    pub base_url: Option<String>,
    pub model: String,
    /// Name of the environment variable holding a bearer token.
    pub api_key_env: Option<String>,
    pub temperature: f64,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: None,
            model: "llama-3-8b-instruct".into(),
            api_key_env: None,
            temperature: 0.0,
            timeout_s: 60.0,
            max_retries: 3,
            backoff_ms: 500,
            max_in_flight: 4,
        }
    }
}

impl EndpointConfig {
    pub fn is_offline(&self) -> bool {
        self.base_url.is_none()
    }

    fn completions_url(&self) -> Option<String> {
        self.base_url.as_ref().map(|b| {
            let b = b.trim_end_matches('/');
            if b.ends_with("/chat/completions") {
                b.to_string()
            } else {
                format!("{b}/chat/completions")
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub model: String,
    pub latency_ms: u64,
    pub attempts: u32,
    pub offline: bool,
}

pub fn offline_placeholder(query: &str) -> String {
    format!("[offline: no endpoint configured] Query:\n{query}")
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: [Message<'a>; 2],
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

pub struct LlmClient {
    cfg: EndpointConfig,
    http: Option<reqwest::blocking::Client>,
    in_flight: Mutex<usize>,
    slot_free: Condvar,
}

impl LlmClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self, LlmError> {
        let http = if cfg.is_offline() {
            None
        } else {
            Some(
                reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs_f64(cfg.timeout_s))
                    .build()
                    .map_err(|e| LlmError::Transport {
                        msg: e.to_string(),
                        attempts: 0,
                    })?,
            )
        };
        Ok(Self {
            cfg,
            http,
            in_flight: Mutex::new(0),
            slot_free: Condvar::new(),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    /// Sends one system + user exchange and returns the first choice.
    pub fn query(&self, query: &str) -> Result<LlmResponse, LlmError> {
        let (Some(http), Some(url)) = (&self.http, self.cfg.completions_url()) else {
            return Ok(LlmResponse {
                text: offline_placeholder(query),
                model: OFFLINE_MODEL.into(),
                latency_ms: 0,
                attempts: 0,
                offline: true,
            });
        };
        let key = match &self.cfg.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| LlmError::MissingApiKey(var.clone()))?),
            None => None,
        };
        let _slot = self.acquire();
        let body = ChatRequest {
            model: &self.cfg.model,
            temperature: self.cfg.temperature,
            messages: [
                Message {
                    role: "system",
                    content: SYSTEM_PROMPT,
                },
                Message {
                    role: "user",
                    content: query,
                },
            ],
        };
        let started = Instant::now();
        let max_attempts = self.cfg.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let mut req = http.post(&url).json(&body);
            if let Some(k) = &key {
                req = req.bearer_auth(k);
            }
            let err = match req.send() {
                Ok(resp) if resp.status().is_success() => {
                    let text = resp.text().map_err(|e| LlmError::Malformed(e.to_string()))?;
                    let content = extract_content(&text)?;
                    if attempt > 1 {
                        log::info!("completion succeeded after {} retries", attempt - 1);
                    }
                    return Ok(LlmResponse {
                        text: content,
                        model: self.cfg.model.clone(),
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempts: attempt,
                        offline: false,
                    });
                }
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    let body = resp.text().unwrap_or_default();
                    let retryable = status == 429 || status >= 500;
                    let e = LlmError::Status {
                        status,
                        body,
                        attempts: attempt,
                    };
                    if !retryable {
                        return Err(e);
                    }
                    e
                }
                Err(e) if e.is_timeout() => LlmError::Timeout { attempts: attempt },
                Err(e) => LlmError::Transport {
                    msg: e.to_string(),
                    attempts: attempt,
                },
            };
            if attempt >= max_attempts {
                return Err(err);
            }
            let wait = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
            log::warn!("completion attempt {attempt} failed ({err}); retrying in {wait} ms");
            std::thread::sleep(Duration::from_millis(wait));
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let limit = self.cfg.max_in_flight.max(1);
        let mut n = self.in_flight.lock().expect("in-flight counter poisoned");
        while *n >= limit {
            n = self.slot_free.wait(n).expect("in-flight counter poisoned");
        }
        *n += 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a LlmClient);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().expect("in-flight counter poisoned");
        *n -= 1;
        self.0.slot_free.notify_one();
    }
}

/// `choices[0].message.content` of a chat-completion body.
pub fn extract_content(body: &str) -> Result<String, LlmError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| LlmError::Malformed(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_owned)
        .ok_or_else(|| LlmError::Malformed("missing choices[0].message.content".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    /// Serves the given (status, body) responses in order, one per
    /// connection, and records the request bodies.
    fn mock(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen2 = seen.clone();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut req = vec![0; len];
                reader.read_exact(&mut req).unwrap();
                seen2.lock().unwrap().push(String::from_utf8(req).unwrap());
                let mut s = stream;
                write!(
                    s,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}/v1"), seen)
    }

    fn completion(text: &str) -> String {
        serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
    }

    fn cfg(url: String) -> EndpointConfig {
        EndpointConfig {
            base_url: Some(url),
            backoff_ms: 1,
            timeout_s: 5.0,
            ..Default::default()
        }
    }

    #[test]
    fn extracts_content() {
        let (url, seen) = mock(vec![(200, completion("The predicted outcome is DDoS."))]);
        let client = LlmClient::new(cfg(url)).unwrap();
        let r = client.query("why?").unwrap();
        assert_eq!(r.text, "The predicted outcome is DDoS.");
        assert_eq!(r.attempts, 1);
        let req: serde_json::Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
        assert_eq!(req["messages"][0]["role"], "system");
        assert_eq!(req["messages"][1]["content"], "why?");
        assert_eq!(req["temperature"], 0.0);
    }

    #[test]
    fn retries_after_server_error() {
        let (url, _) = mock(vec![(500, "{}".into()), (200, completion("ok"))]);
        let r = LlmClient::new(cfg(url)).unwrap().query("q").unwrap();
        assert_eq!((r.text.as_str(), r.attempts), ("ok", 2));
    }

    #[test]
    fn client_error_is_not_retried() {
        let (url, _) = mock(vec![(400, "bad".into())]);
        let err = LlmClient::new(cfg(url)).unwrap().query("q").unwrap_err();
        assert!(matches!(err, LlmError::Status { status: 400, attempts: 1, .. }));
    }

    #[test]
    fn gives_up_after_retries() {
        let (url, _) = mock(vec![(503, String::new()); 4]);
        let err = LlmClient::new(cfg(url)).unwrap().query("q").unwrap_err();
        assert!(matches!(err, LlmError::Status { status: 503, attempts: 4, .. }));
    }

    #[test]
    fn malformed_body() {
        let (url, _) = mock(vec![(200, "{\"choices\": []}".into())]);
        let err = LlmClient::new(cfg(url)).unwrap().query("q").unwrap_err();
        assert!(matches!(err, LlmError::Malformed(_)));
    }

    #[test]
    fn offline_embeds_query() {
        let client = LlmClient::new(EndpointConfig::default()).unwrap();
        let r = client.query("exact query text").unwrap();
        assert!(r.offline);
        assert!(r.text.contains("exact query text"));
    }
}
