//! Shared blocking JSON-over-HTTP client for remote chat and embedding
//! providers: bearer auth from the environment, bounded retries with
//! exponential backoff, and a cap on concurrent requests.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum HttpError {
    #[error("environment variable {0} is not set")]
    MissingKey(String),
    #[error("request failed after {attempts} attempt(s): {message}")]
    Exhausted { attempts: u32, message: String },
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("client setup failed: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub max_in_flight: usize,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60,
            max_retries: 3,
            max_in_flight: 4,
        }
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct InFlight {
    free: Mutex<usize>,
    cond: Condvar,
}

impl InFlight {
    fn acquire(self: &Arc<Self>) -> InFlightGuard {
        let mut free = self.free.lock().expect("in-flight lock poisoned");
        while *free == 0 {
            free = self.cond.wait(free).expect("in-flight lock poisoned");
        }
        *free -= 1;
        InFlightGuard(Arc::clone(self))
    }
}

struct InFlightGuard(Arc<InFlight>);

impl Drop for InFlightGuard {
    fn drop(&mut self) {
        *self.0.free.lock().expect("in-flight lock poisoned") += 1;
        self.0.cond.notify_one();
    }
}

pub struct JsonClient {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    in_flight: Arc<InFlight>,
}

impl JsonClient {
    pub fn new(config: HttpConfig) -> Result<Self, HttpError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| HttpError::Setup(e.to_string()))?;
        let in_flight = Arc::new(InFlight {
            free: Mutex::new(config.max_in_flight.max(1)),
            cond: Condvar::new(),
        });
        Ok(Self {
            config,
            client,
            in_flight,
        })
    }

    fn api_key(&self) -> Result<String, HttpError> {
        std::env::var(&self.config.api_key_env).map_err(|_| HttpError::MissingKey(self.config.api_key_env.clone()))
    }

    pub fn post_json<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, HttpError> {
        let key = self.api_key()?;
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), path);
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = Duration::from_millis(500 * 2u64.pow(attempt - 1));
                tracing::warn!(%url, attempt, ?backoff, error = %last, "retrying request");
                std::thread::sleep(backoff);
            }
            let _permit = self.in_flight.acquire();
            let result = self.client.post(&url).bearer_auth(&key).json(body).send();
            match result {
                Ok(resp) if resp.status().is_success() => {
                    return resp.json::<R>().map_err(|e| HttpError::Rejected {
                        status: 200,
                        body: format!("undecodable body: {e}"),
                    });
                }
                Ok(resp) => {
                    let status = resp.status();
                    let body = resp.text().unwrap_or_default();
                    if status.is_server_error() || status.as_u16() == 429 {
                        last = format!("status {status}: {body}");
                        continue;
                    }
                    return Err(HttpError::Rejected {
                        status: status.as_u16(),
                        body,
                    });
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(HttpError::Exhausted {
            attempts,
            message: last,
        })
    }
}
