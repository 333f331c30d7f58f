use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{RemoteError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 5, backoff_base_ms: 500, backoff_cap_ms: 30_000 }
    }
}

impl RetryPolicy {
    /// Sleep before retry number `attempt` (1-based): `base * 2^(attempt-1)`, capped.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(self.backoff_cap_ms))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// Endpoint root; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the api key. The key itself
    /// never appears in configs, logs or cache files.
    pub api_key_env: Option<String>,
    pub max_concurrent: usize,
    pub requests_per_minute: f64,
    pub retry: RetryPolicy,
    /// Sampling temperature; 1.0 samples the model's own distribution.
    pub temperature: f64,
    pub max_tokens: u32,
    pub cache_dir: Option<PathBuf>,
    pub timeout_secs: u64,
    /// Forward the draw tag as the request `seed`.
    pub send_seed: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            max_concurrent: 4,
            requests_per_minute: 60.0,
            retry: RetryPolicy::default(),
            temperature: 1.0,
            max_tokens: 16,
            cache_dir: None,
            timeout_secs: 60,
            send_seed: true,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(RemoteError::InvalidConfig(m.into()));
        if self.base_url.is_empty() || self.model.is_empty() {
            return bad("base_url and model must be set");
        }
        if self.max_concurrent == 0 {
            return bad("max_concurrent must be >= 1");
        }
        if !(self.requests_per_minute.is_finite() && self.requests_per_minute > 0.0) {
            return bad("requests_per_minute must be > 0");
        }
        if self.retry.max_attempts == 0 {
            return bad("retry.max_attempts must be >= 1");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be >= 0");
        }
        if self.max_tokens == 0 || self.timeout_secs == 0 {
            return bad("max_tokens and timeout_secs must be >= 1");
        }
        Ok(())
    }

    /// Minimum spacing between request starts implied by the per-minute budget.
    pub fn min_spacing(&self) -> Duration {
        Duration::from_secs_f64(60.0 / self.requests_per_minute)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_then_caps() {
        let p = RetryPolicy { max_attempts: 10, backoff_base_ms: 100, backoff_cap_ms: 1000 };
        let ms: Vec<u128> = (1..=6).map(|a| p.backoff(a).as_millis()).collect();
        assert_eq!(ms, vec![100, 200, 400, 800, 1000, 1000]);
        assert_eq!(p.backoff(200).as_millis(), 1000);
    }

    #[test]
    fn validation() {
        assert!(BackendConfig::default().validate().is_ok());
        assert!(BackendConfig { max_concurrent: 0, ..Default::default() }.validate().is_err());
        assert!(BackendConfig { requests_per_minute: 0.0, ..Default::default() }.validate().is_err());
        assert_eq!(BackendConfig { requests_per_minute: 600.0, ..Default::default() }.min_spacing(), Duration::from_millis(100));
    }
}
