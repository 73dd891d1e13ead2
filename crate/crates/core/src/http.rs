//! Blocking JSON-over-HTTP helper shared by the remote chat, scoring and
//! summarization clients.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpSettings {
    pub timeout_secs: f64,
    /// Retries after the first attempt; transport errors, 429 and 5xx are retried.
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct JsonClient {
    http: reqwest::blocking::Client,
    settings: HttpSettings,
}

impl JsonClient {
    pub(crate) fn new(settings: HttpSettings) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(settings.timeout_secs.max(0.001)))
            .build()
            .map_err(|e| Error::Backend {
                message: format!("failed to build HTTP client: {e}"),
                attempts: 0,
                status: None,
            })?;
        Ok(Self { http, settings })
    }

    /// POSTs `body` and returns the decoded JSON response. The request value is
    /// never modified, so a retry resends exactly the same payload.
    pub(crate) fn post(&self, url: &str, body: &Value, bearer: Option<&str>) -> Result<Value> {
        let max_attempts = self.settings.max_retries + 1;
        let mut last_err = None;
        for attempt in 1..=max_attempts {
            if attempt > 1 {
                let shift = (attempt - 2).min(6);
                thread::sleep(Duration::from_millis(self.settings.backoff_ms << shift));
            }
            let mut request = self.http.post(url).json(body);
            if let Some(token) = bearer {
                request = request.bearer_auth(token);
            }
            match request.send() {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        return response.json::<Value>().map_err(|e| {
                            Error::Protocol(format!("response from {url} is not valid JSON: {e}"))
                        });
                    }
                    let text = response.text().unwrap_or_default();
                    let err = Error::Backend {
                        message: format!("{url} returned {status}: {}", truncate(&text, 200)),
                        attempts: attempt,
                        status: Some(status.as_u16()),
                    };
                    if !(status.as_u16() == 429 || status.is_server_error()) {
                        return Err(err);
                    }
                    log::warn!("attempt {attempt}/{max_attempts} to {url} failed with {status}");
                    last_err = Some(err);
                }
                Err(e) => {
                    log::warn!("attempt {attempt}/{max_attempts} to {url} failed: {e}");
                    last_err = Some(Error::Backend {
                        message: format!("request to {url} failed: {e}"),
                        attempts: attempt,
                        status: None,
                    });
                }
            }
        }
        Err(last_err.expect("at least one attempt is always made"))
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

pub(crate) fn bearer_from_env(var: Option<&str>) -> Result<Option<String>> {
    match var {
        None => Ok(None),
        Some(name) => std::env::var(name).map(Some).map_err(|_| {
            Error::config(format!(
                "environment variable `{name}` holding the API key is not set"
            ))
        }),
    }
}
