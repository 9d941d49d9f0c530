//! Chat-completion gateway.
//!
//! A [`Gateway`] wraps one [`ChatBackend`] (live HTTP, the offline mock, or
//! none at all for replay) with a content-addressed response cache and a
//! bound on in-flight requests. Requests are keyed by
//! [`prompt_hash`]; retries and window replicas are salted into the hash so
//! every distinct sampling gets its own write-once record.

mod cache;
mod live;
mod mock;

use std::sync::{Condvar, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use self::cache::ResponseCache;
pub use self::live::{LiveBackend, ENDPOINT_ENV, API_KEY_ENV};
pub use self::mock::{MockBackend, MockSettings};
use crate::config::{BackendKind, PipelineConfig};
use crate::error::{Error, Result};
use crate::integrity::Verdict;
use crate::prompter::ChatPrompt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub model: String,
    pub temperature: f64,
}

/// Distinguishes repeated samplings of one prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct RequestSalt {
    pub replica: usize,
    /// 1-based attempt number.
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub prompt_hash: String,
    pub backend_id: String,
    pub attempt: u32,
    pub replica: usize,
    pub request: ChatRequest,
    pub response: String,
    /// Seconds since the Unix epoch when the response was obtained.
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
}

/// SHA-256 over the prompt text, decoding parameters and salt.
pub fn prompt_hash(prompt: &ChatPrompt, params: &DecodingParams, salt: RequestSalt) -> String {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field(params.model.as_bytes());
    field(&params.temperature.to_bits().to_le_bytes());
    field(prompt.system.as_bytes());
    field(prompt.user.as_bytes());
    field(&(salt.replica as u64).to_le_bytes());
    field(&salt.attempt.to_le_bytes());
    hex::encode(h.finalize())
}

/// A source of completions.
pub trait ChatBackend: Send + Sync {
    /// Identity recorded with every exchange; a cache belongs to one id.
    fn id(&self) -> String;

    fn complete(
        &self,
        request: &ChatRequest,
        salt: RequestSalt,
        prompt_hash: &str,
    ) -> Result<String>;
}

struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.freed.wait(p).unwrap();
        }
        *p -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    backend: Option<Box<dyn ChatBackend>>,
    cache: Option<ResponseCache>,
    params: DecodingParams,
    limiter: Semaphore,
}

impl Gateway {
    /// A gateway that calls `backend`, recording into `cache` when given.
    pub fn new(
        backend: Box<dyn ChatBackend>,
        cache: Option<ResponseCache>,
        params: DecodingParams,
        max_concurrency: usize,
    ) -> Self {
        Self {
            backend: Some(backend),
            cache,
            params,
            limiter: Semaphore::new(max_concurrency.max(1)),
        }
    }

    /// A gateway that serves only recorded responses.
    pub fn replay(cache: ResponseCache, params: DecodingParams) -> Self {
        Self {
            backend: None,
            cache: Some(cache),
            params,
            limiter: Semaphore::new(1),
        }
    }

    pub fn params(&self) -> &DecodingParams {
        &self.params
    }

    pub fn backend_id(&self) -> String {
        self.backend
            .as_ref()
            .map(|b| b.id())
            .unwrap_or_else(|| "replay".into())
    }

    pub fn complete(&self, prompt: &ChatPrompt, salt: RequestSalt) -> Result<LlmExchange> {
        let hash = prompt_hash(prompt, &self.params, salt);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&hash)? {
                return Ok(hit);
            }
        }
        let Some(backend) = &self.backend else {
            return Err(Error::ReplayMiss(hash));
        };
        let request = ChatRequest {
            model: self.params.model.clone(),
            temperature: self.params.temperature,
            system: prompt.system.clone(),
            user: prompt.user.clone(),
        };
        let response = {
            let _permit = self.limiter.acquire();
            backend.complete(&request, salt, &hash)?
        };
        let exchange = LlmExchange {
            prompt_hash: hash,
            backend_id: backend.id(),
            attempt: salt.attempt,
            replica: salt.replica,
            request,
            response,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            verdict: None,
        };
        match &self.cache {
            Some(cache) => cache.put(&exchange),
            None => Ok(exchange),
        }
    }

    /// Builds the gateway selected by `cfg.llm.backend`. The mock consults
    /// `oracle` for the labels it sharpens toward.
    pub fn from_config(cfg: &PipelineConfig, oracle: mock::OracleLabels) -> Result<Self> {
        let params = DecodingParams {
            model: cfg.llm.model.clone(),
            temperature: cfg.llm.temperature,
        };
        let backend: Box<dyn ChatBackend> = match cfg.llm.backend {
            BackendKind::Replay => {
                let dir = cfg.llm.cache_dir.as_ref().ok_or_else(|| {
                    Error::Config("replay backend requires llm.cache_dir".into())
                })?;
                return Ok(Self::replay(ResponseCache::open_existing(dir)?, params));
            }
            BackendKind::Mock => Box::new(MockBackend::new(
                MockSettings::from_config(cfg),
                oracle,
            )),
            BackendKind::Live => Box::new(LiveBackend::from_env(&cfg.llm)?),
        };
        let cache = cfg
            .llm
            .cache_dir
            .as_ref()
            .map(|dir| ResponseCache::open(dir, &backend.id()))
            .transpose()?;
        Ok(Self::new(backend, cache, params, cfg.llm.max_concurrency))
    }
}

pub use self::mock::OracleLabels;

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn prompt(s: &str) -> ChatPrompt {
        ChatPrompt {
            system: "sys".into(),
            user: s.into(),
        }
    }

    fn params() -> DecodingParams {
        DecodingParams {
            model: "m".into(),
            temperature: 1.0,
        }
    }

    struct Counting {
        calls: Arc<AtomicUsize>,
        in_flight: Arc<AtomicUsize>,
        peak: Arc<AtomicUsize>,
    }

    impl ChatBackend for Counting {
        fn id(&self) -> String {
            "counting".into()
        }

        fn complete(&self, req: &ChatRequest, salt: RequestSalt, _hash: &str) -> Result<String> {
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(5));
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(format!("{}:{}:{n}", req.user, salt.attempt))
        }
    }

    fn counting() -> (Counting, Arc<AtomicUsize>, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        (
            Counting {
                calls: calls.clone(),
                in_flight: Arc::new(AtomicUsize::new(0)),
                peak: peak.clone(),
            },
            calls,
            peak,
        )
    }

    #[test]
    fn hash_depends_on_every_input() {
        let base = prompt_hash(&prompt("a"), &params(), RequestSalt::default());
        assert_eq!(base, prompt_hash(&prompt("a"), &params(), RequestSalt::default()));
        assert_ne!(base, prompt_hash(&prompt("b"), &params(), RequestSalt::default()));
        let hot = DecodingParams { temperature: 0.5, ..params() };
        assert_ne!(base, prompt_hash(&prompt("a"), &hot, RequestSalt::default()));
        let retry = RequestSalt { replica: 0, attempt: 2 };
        assert_ne!(base, prompt_hash(&prompt("a"), &params(), retry));
    }

    #[test]
    fn record_then_replay_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (backend, calls, _) = counting();
        let cache = ResponseCache::open(dir.path(), &backend.id()).unwrap();
        let gw = Gateway::new(Box::new(backend), Some(cache), params(), 2);
        let salt = RequestSalt { replica: 0, attempt: 1 };
        let first = gw.complete(&prompt("x"), salt).unwrap();
        let again = gw.complete(&prompt("x"), salt).unwrap();
        assert_eq!(first.response, again.response);
        assert_eq!(calls.load(Ordering::SeqCst), 1);

        let replay = Gateway::replay(ResponseCache::open_existing(dir.path()).unwrap(), params());
        let r1 = replay.complete(&prompt("x"), salt).unwrap();
        let r2 = replay.complete(&prompt("x"), salt).unwrap();
        assert_eq!(r1.response, first.response);
        assert_eq!(r1, r2);
        let miss = replay.complete(&prompt("y"), salt).unwrap_err();
        assert!(matches!(miss, Error::ReplayMiss(_)));
        assert_eq!(miss.exit_code(), 3);
    }

    #[test]
    fn cache_refuses_foreign_backend() {
        let dir = tempfile::tempdir().unwrap();
        ResponseCache::open(dir.path(), "a").unwrap();
        assert!(ResponseCache::open(dir.path(), "b").is_err());
    }

    #[test]
    fn write_once_keeps_first_record() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path(), "t").unwrap();
        let mut ex = LlmExchange {
            prompt_hash: "ab".repeat(32),
            backend_id: "t".into(),
            attempt: 1,
            replica: 0,
            request: ChatRequest {
                model: "m".into(),
                temperature: 1.0,
                system: String::new(),
                user: String::new(),
            },
            response: "first".into(),
            timestamp: 0,
            verdict: None,
        };
        cache.put(&ex).unwrap();
        ex.response = "second".into();
        let stored = cache.put(&ex).unwrap();
        assert_eq!(stored.response, "first");
        assert_eq!(cache.len().unwrap(), 1);
    }

    #[test]
    fn in_flight_requests_are_bounded() {
        let (backend, calls, peak) = counting();
        let gw = Gateway::new(Box::new(backend), None, params(), 3);
        std::thread::scope(|s| {
            for i in 0..24 {
                let gw = &gw;
                s.spawn(move || {
                    gw.complete(&prompt(&i.to_string()), RequestSalt::default()).unwrap();
                });
            }
        });
        assert_eq!(calls.load(Ordering::SeqCst), 24);
        assert!(peak.load(Ordering::SeqCst) <= 3, "peak {}", peak.load(Ordering::SeqCst));
        assert!(peak.load(Ordering::SeqCst) >= 2);
    }
}
