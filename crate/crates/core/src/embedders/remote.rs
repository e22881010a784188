//! Client for an HTTP embedding service.
//!
//! Wire protocol: `POST <endpoint>` with body
//! `{"model": "<id>", "texts": ["...", ...]}`, answered by
//! `{"embeddings": [[...], ...]}` with one row per text in request order.
//! A bearer token is sent when `EMBED_API_KEY` is set.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingCache, EmbeddingMatrix, Provenance};

pub const API_KEY_ENV: &str = "EMBED_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "RemoteConfig::default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "RemoteConfig::default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "RemoteConfig::default_attempts")]
    pub max_attempts: usize,
    /// First retry waits this long; each further retry doubles it.
    #[serde(default = "RemoteConfig::default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "RemoteConfig::default_timeout_secs")]
    pub timeout_secs: u64,
}

impl RemoteConfig {
    fn default_batch_size() -> usize {
        32
    }
    fn default_in_flight() -> usize {
        4
    }
    fn default_attempts() -> usize {
        3
    }
    fn default_backoff_ms() -> u64 {
        250
    }
    fn default_timeout_secs() -> u64 {
        60
    }

    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            batch_size: Self::default_batch_size(),
            max_in_flight: Self::default_in_flight(),
            max_attempts: Self::default_attempts(),
            backoff_ms: Self::default_backoff_ms(),
            timeout_secs: Self::default_timeout_secs(),
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

enum Failure {
    Retryable(String),
    Fatal(EmbedError),
}

pub struct RemoteEmbedder {
    cfg: RemoteConfig,
    client: reqwest::blocking::Client,
    cache: Arc<EmbeddingCache>,
    api_key: Option<String>,
    requests: AtomicUsize,
}

impl RemoteEmbedder {
    /// Reads the API key from `EMBED_API_KEY`.
    pub fn new(cfg: RemoteConfig, cache: Arc<EmbeddingCache>) -> Result<Self, EmbedError> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        RemoteEmbedder::with_api_key(cfg, cache, key)
    }

    pub fn with_api_key(
        cfg: RemoteConfig,
        cache: Arc<EmbeddingCache>,
        api_key: Option<String>,
    ) -> Result<Self, EmbedError> {
        if cfg.batch_size == 0 || cfg.max_in_flight == 0 || cfg.max_attempts == 0 {
            return Err(EmbedError::Config(
                "batch_size, max_in_flight and max_attempts must be positive".into(),
            ));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .pool_max_idle_per_host(0)
            .build()
            .map_err(|e| EmbedError::Config(e.to_string()))?;
        Ok(RemoteEmbedder {
            cfg,
            client,
            cache,
            api_key,
            requests: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.cfg
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    /// HTTP requests issued so far, retries included.
    pub fn requests_sent(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::of("remote", &(&self.cfg.endpoint, &self.cfg.model))
    }

    fn post_once(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, Failure> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let mut req = self.client.post(&self.cfg.endpoint).json(&EmbedRequest {
            model: &self.cfg.model,
            texts,
        });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let msg = format!("HTTP {status}");
            return if status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408
            {
                Err(Failure::Retryable(msg))
            } else {
                Err(Failure::Fatal(EmbedError::Transport {
                    attempts: 1,
                    last: msg,
                }))
            };
        }
        let body: EmbedResponse = resp
            .json()
            .map_err(|e| Failure::Fatal(EmbedError::Response(e.to_string())))?;
        if body.embeddings.len() != texts.len() {
            return Err(Failure::Fatal(EmbedError::Response(format!(
                "{} embeddings for {} texts",
                body.embeddings.len(),
                texts.len()
            ))));
        }
        Ok(body.embeddings)
    }

    fn post_with_retry(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut last = String::new();
        for attempt in 0..self.cfg.max_attempts {
            if attempt > 0 {
                let wait = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                thread::sleep(Duration::from_millis(wait));
            }
            match self.post_once(texts) {
                Ok(rows) => return Ok(rows),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => last = msg,
            }
        }
        Err(EmbedError::Transport {
            attempts: self.cfg.max_attempts,
            last,
        })
    }

    /// Embeds `texts`, serving cache hits locally and fetching misses in
    /// batches. Rows come back in input order.
    pub fn embed_texts(&self, texts: &[String]) -> Result<EmbeddingMatrix, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::NoTexts);
        }
        let keys: Vec<String> = texts
            .iter()
            .map(|t| EmbeddingCache::key(&self.cfg.endpoint, &self.cfg.model, t))
            .collect();

        // Unique misses in first-seen order.
        let mut pending: Vec<(String, String)> = Vec::new();
        let mut queued: HashMap<&str, ()> = HashMap::new();
        for (key, text) in keys.iter().zip(texts) {
            if self.cache.get(key).is_none() && queued.insert(key.as_str(), ()).is_none() {
                pending.push((key.clone(), text.clone()));
            }
        }

        let batches: Vec<&[(String, String)]> = pending.chunks(self.cfg.batch_size).collect();
        let results: Vec<Mutex<Option<Result<Vec<Vec<f64>>, EmbedError>>>> =
            batches.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.cfg.max_in_flight.min(batches.len());
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(batch) = batches.get(i) else { break };
                    let batch_texts: Vec<String> = batch.iter().map(|(_, t)| t.clone()).collect();
                    let res = self.post_with_retry(&batch_texts);
                    let failed = res.is_err();
                    *results[i].lock().unwrap() = Some(res);
                    if failed {
                        // Stop handing out new batches.
                        next.store(batches.len(), Ordering::SeqCst);
                    }
                });
            }
        });

        let mut dim: Option<usize> = None;
        let mut check_row = |row: &[f64], what: &str| -> Result<(), EmbedError> {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(EmbedError::Response(format!("non-finite entry in {what}")));
            }
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(EmbedError::DimensionMismatch(format!(
                        "{what} has width {}, expected {d}",
                        row.len()
                    )))
                }
                _ => {}
            }
            Ok(())
        };

        // Validate every fetched batch before anything is cached.
        let mut fetched: Vec<Vec<Vec<f64>>> = Vec::with_capacity(batches.len());
        for slot in results {
            match slot.into_inner().unwrap() {
                Some(Ok(rows)) => fetched.push(rows),
                Some(Err(e)) => return Err(e),
                None => {
                    return Err(EmbedError::Transport {
                        attempts: 0,
                        last: "batch abandoned after an earlier failure".into(),
                    })
                }
            }
        }
        for rows in &fetched {
            for row in rows {
                check_row(row, "service response")?;
            }
        }
        for (batch, rows) in batches.iter().zip(fetched) {
            for ((key, _), row) in batch.iter().zip(rows) {
                self.cache.insert(key.clone(), row)?;
            }
        }

        let mut out = Vec::with_capacity(texts.len());
        for key in &keys {
            let row = self
                .cache
                .get(key)
                .ok_or_else(|| EmbedError::Cache("entry vanished".into()))?;
            check_row(&row, "cached embedding")?;
            out.push(row);
        }
        let d = dim.unwrap_or(0);
        EmbeddingMatrix::from_rows(out, d, self.provenance())
    }
}

/// Convenience wrapper around [`RemoteEmbedder::embed_texts`].
pub fn embed_remote(
    texts: &[String],
    cfg: &RemoteConfig,
    cache: Arc<EmbeddingCache>,
) -> Result<EmbeddingMatrix, EmbedError> {
    RemoteEmbedder::new(cfg.clone(), cache)?.embed_texts(texts)
}
