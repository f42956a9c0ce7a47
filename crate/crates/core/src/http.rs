//! Blocking JSON-over-HTTP with retry, shared by the remote embedding and
//! chat-completion backends.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::Value;

/// Spaces out request starts so that at most one request begins per
/// `min_interval`. Shared (behind an `Arc`) by every remote backend of a run.
#[derive(Debug)]
pub struct RateLimiter {
    min_interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(min_interval: Duration) -> Self {
        Self {
            min_interval,
            next_slot: Mutex::new(None),
        }
    }

    pub fn per_minute(requests: u32) -> Self {
        let requests = requests.max(1);
        Self::new(Duration::from_secs_f64(60.0 / f64::from(requests)))
    }

    pub fn acquire(&self) {
        let wait = {
            let mut slot = self.next_slot.lock().unwrap_or_else(|p| p.into_inner());
            let now = Instant::now();
            let start = match *slot {
                Some(t) if t > now => t,
                _ => now,
            };
            *slot = Some(start + self.min_interval);
            start.saturating_duration_since(now)
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Debug)]
pub(crate) enum HttpFailure {
    /// Network errors, timeouts, 429 and 5xx after all retries.
    Transient { attempts: u32, last: String },
    /// Any other non-success status, or an unreadable body. Not retried.
    Fatal(String),
}

pub(crate) fn post_json(
    url: &str,
    bearer: Option<&str>,
    body: &impl Serialize,
    policy: &RetryPolicy,
    limiter: Option<&RateLimiter>,
) -> Result<Value, HttpFailure> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(policy.timeout))
        .http_status_as_error(false)
        .build()
        .into();

    let mut backoff = policy.initial_backoff;
    let mut last = String::new();
    for attempt in 0..=policy.max_retries {
        if attempt > 0 {
            log::warn!("retrying {url} after {backoff:?} (attempt {attempt}): {last}");
            std::thread::sleep(backoff);
            backoff *= 2;
        }
        if let Some(l) = limiter {
            l.acquire();
        }
        let mut req = agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = bearer {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                if status == 429 || status >= 500 {
                    last = format!("HTTP {status}");
                    continue;
                }
                if !(200..300).contains(&status) {
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    return Err(HttpFailure::Fatal(format!("HTTP {status}: {text}")));
                }
                return resp
                    .body_mut()
                    .read_json::<Value>()
                    .map_err(|e| HttpFailure::Fatal(format!("invalid JSON body: {e}")));
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(HttpFailure::Transient {
        attempts: policy.max_retries + 1,
        last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limiter_spaces_requests() {
        let limiter = RateLimiter::new(Duration::from_millis(20));
        let start = Instant::now();
        for _ in 0..4 {
            limiter.acquire();
        }
        assert!(start.elapsed() >= Duration::from_millis(60));
    }
}
