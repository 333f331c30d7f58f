//! Blocking chat-completion client with a concurrency ceiling, request
//! pacing, retries and an on-disk response cache.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::BackendConfig;
use crate::error::{RemoteError, Result};

struct ApiKey(String);

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(<redacted>)")
    }
}

/// Caps in-flight requests and spaces request starts at least
/// `spacing` apart.
struct Limiter {
    free: Mutex<usize>,
    released: Condvar,
    next_start: Mutex<Option<Instant>>,
    spacing: Duration,
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.released.notify_one();
    }
}

impl Limiter {
    fn new(max_concurrent: usize, spacing: Duration) -> Self {
        Limiter { free: Mutex::new(max_concurrent), released: Condvar::new(), next_start: Mutex::new(None), spacing }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.released.wait(free).unwrap();
        }
        *free -= 1;
        drop(free);
        let start = {
            let mut next = self.next_start.lock().unwrap();
            let now = Instant::now();
            let start = next.map_or(now, |n| n.max(now));
            *next = Some(start + self.spacing);
            start
        };
        let wait = start.saturating_duration_since(Instant::now());
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
        Permit(self)
    }
}

/// Everything that identifies a completion for caching.
#[derive(Serialize)]
struct CacheKey<'a> {
    model: &'a str,
    system: Option<&'a str>,
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
    rng_tag: u64,
}

impl CacheKey<'_> {
    fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("cache key serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClientStats {
    pub network_attempts: u64,
    pub completions: u64,
    pub cache_hits: u64,
    pub retries: u64,
}

pub struct ChatClient {
    cfg: BackendConfig,
    agent: ureq::Agent,
    api_key: Option<ApiKey>,
    limiter: Limiter,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    network_attempts: AtomicU64,
    completions: AtomicU64,
    cache_hits: AtomicU64,
    retries: AtomicU64,
    tmp_counter: AtomicUsize,
}

enum Attempt {
    Done(String),
    Transient(String),
}

impl ChatClient {
    pub fn new(cfg: BackendConfig) -> Result<Self> {
        cfg.validate()?;
        let api_key = match &cfg.api_key_env {
            Some(var) => Some(ApiKey(std::env::var(var).map_err(|_| RemoteError::MissingApiKey(var.clone()))?)),
            None => None,
        };
        if let Some(dir) = &cfg.cache_dir {
            fs::create_dir_all(dir)?;
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .build()
            .into();
        Ok(ChatClient {
            limiter: Limiter::new(cfg.max_concurrent, cfg.min_spacing()),
            cfg,
            agent,
            api_key,
            key_locks: Mutex::new(HashMap::new()),
            network_attempts: AtomicU64::new(0),
            completions: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            retries: AtomicU64::new(0),
            tmp_counter: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.cfg
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            network_attempts: self.network_attempts.load(Ordering::Relaxed),
            completions: self.completions.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
        }
    }

    /// Cache file for a request, whether or not it exists yet.
    pub fn cache_path(&self, system: Option<&str>, prompt: &str, rng_tag: u64) -> Option<PathBuf> {
        let key = self.cache_key(system, prompt, rng_tag);
        self.cfg.cache_dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    fn cache_key(&self, system: Option<&str>, prompt: &str, rng_tag: u64) -> String {
        CacheKey {
            model: &self.cfg.model,
            system,
            prompt,
            temperature: self.cfg.temperature,
            max_tokens: self.cfg.max_tokens,
            rng_tag,
        }
        .digest()
    }

    /// Completion text for `prompt`. A cached response for the same key is
    /// returned without touching the network.
    pub fn complete(&self, system: Option<&str>, prompt: &str, rng_tag: u64) -> Result<String> {
        let key = self.cache_key(system, prompt, rng_tag);
        let path = self.cfg.cache_dir.as_ref().map(|d| d.join(format!("{key}.json")));
        // one writer per key: concurrent identical requests wait for the first
        let lock = self.key_locks.lock().unwrap().entry(key.clone()).or_default().clone();
        let _guard = lock.lock().unwrap();

        if let Some(p) = &path {
            if p.exists() {
                let raw = fs::read_to_string(p)?;
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
                return extract_content(&raw);
            }
        }
        let raw = self.request_with_retries(system, prompt, rng_tag)?;
        let text = extract_content(&raw)?;
        if let Some(p) = &path {
            let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
            let tmp = p.with_extension(format!("tmp{}-{n}", std::process::id()));
            fs::write(&tmp, &raw)?;
            fs::rename(&tmp, p)?;
        }
        self.completions.fetch_add(1, Ordering::Relaxed);
        Ok(text)
    }

    fn request_with_retries(&self, system: Option<&str>, prompt: &str, rng_tag: u64) -> Result<String> {
        let body = self.request_body(system, prompt, rng_tag);
        let max = self.cfg.retry.max_attempts;
        let mut last = String::new();
        for attempt in 1..=max {
            match self.attempt(&body)? {
                Attempt::Done(raw) => {
                    if attempt > 1 {
                        log::info!("completion succeeded after {attempt} attempts");
                    }
                    return Ok(raw);
                }
                Attempt::Transient(reason) => {
                    log::warn!("attempt {attempt}/{max} failed: {reason}");
                    last = reason;
                    if attempt < max {
                        self.retries.fetch_add(1, Ordering::Relaxed);
                        std::thread::sleep(self.cfg.retry.backoff(attempt));
                    }
                }
            }
        }
        Err(RemoteError::TransientExhausted { attempts: max, last })
    }

    fn request_body(&self, system: Option<&str>, prompt: &str, rng_tag: u64) -> String {
        let mut messages = Vec::with_capacity(2);
        if let Some(s) = system {
            messages.push(json!({"role": "system", "content": s}));
        }
        messages.push(json!({"role": "user", "content": prompt}));
        let mut body = json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
            "n": 1,
        });
        if self.cfg.send_seed {
            // keep the seed within the exactly representable JSON integer range
            body["seed"] = json!(rng_tag & ((1 << 53) - 1));
        }
        body.to_string()
    }

    fn attempt(&self, body: &str) -> Result<Attempt> {
        let _permit = self.limiter.acquire();
        self.network_attempts.fetch_add(1, Ordering::Relaxed);
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(ApiKey(k)) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {k}"));
        }
        match req.send(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                let text = match resp.body_mut().read_to_string() {
                    Ok(t) => t,
                    Err(e) => return Ok(Attempt::Transient(format!("reading body: {e}"))),
                };
                match status {
                    200..=299 => Ok(Attempt::Done(text)),
                    429 | 500..=599 => Ok(Attempt::Transient(format!("HTTP {status}"))),
                    _ => Err(RemoteError::Http { status, body: text }),
                }
            }
            Err(e @ (ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed)) => {
                Ok(Attempt::Transient(e.to_string()))
            }
            Err(e) => Err(RemoteError::Protocol(e.to_string())),
        }
    }
}

fn extract_content(raw: &str) -> Result<String> {
    let v: Value = serde_json::from_str(raw).map_err(|e| RemoteError::Protocol(format!("not JSON: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| RemoteError::Protocol("missing choices[0].message.content".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(prompt: &str, tag: u64, temperature: f64) -> String {
        CacheKey { model: "m", system: None, prompt, temperature, max_tokens: 8, rng_tag: tag }.digest()
    }

    #[test]
    fn cache_key_covers_every_field() {
        let base = key("p", 1, 0.0);
        assert_eq!(base, key("p", 1, 0.0));
        assert_eq!(base.len(), 64);
        assert_ne!(base, key("p", 2, 0.0));
        assert_ne!(base, key("q", 1, 0.0));
        assert_ne!(base, key("p", 1, 1.0));
        let with_system = CacheKey { model: "m", system: Some("s"), prompt: "p", temperature: 0.0, max_tokens: 8, rng_tag: 1 };
        assert_ne!(base, with_system.digest());
        let other_model = CacheKey { model: "n", system: None, prompt: "p", temperature: 0.0, max_tokens: 8, rng_tag: 1 };
        assert_ne!(base, other_model.digest());
    }

    #[test]
    fn distinct_tags_never_collide() {
        let mut seen = std::collections::HashSet::new();
        for tag in 0..5000u64 {
            assert!(seen.insert(key("same prompt", tag, 1.0)));
        }
    }

    #[test]
    fn content_extraction() {
        let raw = r#"{"choices":[{"message":{"role":"assistant","content":"positive"}}]}"#;
        assert_eq!(extract_content(raw).unwrap(), "positive");
        assert!(extract_content(r#"{"choices":[]}"#).is_err());
        assert!(extract_content("<html>").is_err());
    }

    #[test]
    fn api_key_is_redacted_in_debug() {
        assert_eq!(format!("{:?}", ApiKey("sk-secret".into())), "ApiKey(<redacted>)");
    }
}
