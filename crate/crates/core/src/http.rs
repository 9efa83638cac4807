//! Minimal JSON-over-HTTP helper shared by the remote clients.

use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_RETRIES: u32 = 1;

#[derive(Debug, Clone)]
pub struct JsonClient {
    agent: ureq::Agent,
    retries: u32,
}

impl Default for JsonClient {
    fn default() -> Self {
        Self::new(DEFAULT_TIMEOUT, DEFAULT_RETRIES)
    }
}

impl JsonClient {
    pub fn new(timeout: Duration, retries: u32) -> Self {
        Self {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            retries,
        }
    }

    /// POSTs `body` and decodes the JSON reply. Transport failures and 5xx
    /// responses are retried; 4xx responses are not.
    pub fn post(&self, url: &str, body: &impl Serialize) -> Result<Value> {
        let body = serde_json::to_value(body)?;
        let mut last = String::new();
        for _ in 0..=self.retries {
            match self.agent.post(url).send_json(body.clone()) {
                Ok(resp) => {
                    return resp
                        .into_json::<Value>()
                        .map_err(|e| Error::Remote(format!("{url}: bad JSON reply: {e}")))
                }
                Err(ureq::Error::Status(code, resp)) if code < 500 => {
                    let text = resp.into_string().unwrap_or_default();
                    return Err(Error::Remote(format!("{url}: HTTP {code}: {text}")));
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(Error::Remote(format!("{url}: {last}")))
    }
}

pub fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}
