//! OpenAI-compatible chat-completion client.

use std::time::Duration;

use log::warn;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, RequestSalt};
use crate::config::LlmConfig;
use crate::error::{Error, Result};

/// Full URL of the chat-completions endpoint.
pub const ENDPOINT_ENV: &str = "ERC_LLM_ENDPOINT";
/// Bearer token; `OPENAI_API_KEY` is used when this is unset.
pub const API_KEY_ENV: &str = "ERC_LLM_API_KEY";
const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

#[derive(Debug, Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct Payload<'a> {
    model: &'a str,
    messages: [Message<'a>; 2],
    temperature: f64,
}

#[derive(Debug, Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct LiveBackend {
    client: Client,
    endpoint: String,
    api_key: Option<String>,
    retries: u32,
    backoff: Duration,
}

enum Attempt {
    Done(String),
    Retry(String, Option<Duration>),
}

impl LiveBackend {
    pub fn new(endpoint: String, api_key: Option<String>, cfg: &LlmConfig) -> Result<Self> {
        let client = Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        Ok(Self {
            client,
            endpoint,
            api_key,
            retries: cfg.transport_retries,
            backoff: Duration::from_millis(cfg.backoff_ms),
        })
    }

    pub fn from_env(cfg: &LlmConfig) -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| DEFAULT_ENDPOINT.to_string());
        let api_key = std::env::var(API_KEY_ENV)
            .or_else(|_| std::env::var("OPENAI_API_KEY"))
            .ok();
        Self::new(endpoint, api_key, cfg)
    }

    fn attempt(&self, request: &ChatRequest) -> Result<Attempt> {
        let payload = Payload {
            model: &request.model,
            messages: [
                Message {
                    role: "system",
                    content: &request.system,
                },
                Message {
                    role: "user",
                    content: &request.user,
                },
            ],
            temperature: request.temperature,
        };
        let mut req = self.client.post(&self.endpoint).json(&payload);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Ok(Attempt::Retry(e.to_string(), None)),
        };
        let status = resp.status();
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            let after = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.parse::<u64>().ok())
                .map(Duration::from_secs);
            return Ok(Attempt::Retry(format!("HTTP {status}"), after));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(Error::Backend(format!("HTTP {status}: {body}")));
        }
        let completion: Completion = resp
            .json()
            .map_err(|e| Error::Backend(format!("malformed completion: {e}")))?;
        let content = completion
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Error::Backend("completion has no message content".into()))?;
        Ok(Attempt::Done(content))
    }
}

impl ChatBackend for LiveBackend {
    fn id(&self) -> String {
        format!("live({})", self.endpoint)
    }

    fn complete(&self, request: &ChatRequest, _salt: RequestSalt, _hash: &str) -> Result<String> {
        let mut delay = self.backoff;
        let mut last = String::new();
        for attempt in 0..=self.retries {
            match self.attempt(request)? {
                Attempt::Done(text) => return Ok(text),
                Attempt::Retry(reason, after) => {
                    last = reason;
                    if attempt == self.retries {
                        break;
                    }
                    let wait = after.unwrap_or(delay);
                    warn!("transport failure ({last}), retrying in {wait:?}");
                    std::thread::sleep(wait);
                    delay *= 2;
                }
            }
        }
        Err(Error::Backend(format!(
            "giving up after {} attempts: {last}",
            self.retries + 1
        )))
    }
}
