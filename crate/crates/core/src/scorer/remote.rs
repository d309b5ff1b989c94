use std::io::Read;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use super::protocol::{all_scores, decode_response, encode_request, single_scores, ScoresPayload};
use super::{ScoreKind, ScorerError, DEFAULT_RETRIES};
use crate::Image;

/// HTTP client for a scoring service exposing `POST /score`.
#[derive(Debug)]
pub struct RemoteClient {
    url: String,
    agent: ureq::Agent,
    retries: usize,
    in_flight: Mutex<usize>,
    slot_freed: Condvar,
    max_in_flight: usize,
}

impl RemoteClient {
    /// `endpoint` is either the service base URL or the full `/score` URL.
    pub fn new(endpoint: &str) -> Self {
        let trimmed = endpoint.trim_end_matches('/');
        let url = if trimmed.ends_with("/score") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/score")
        };
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(10))
            .timeout(Duration::from_secs(300))
            .build();
        RemoteClient {
            url,
            agent,
            retries: DEFAULT_RETRIES,
            in_flight: Mutex::new(0),
            slot_freed: Condvar::new(),
            max_in_flight: 4,
        }
    }

    pub fn with_retries(mut self, retries: usize) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.url
    }

    pub fn score(&self, images: &[Image], target: usize, kind: ScoreKind) -> Result<Vec<f64>, ScorerError> {
        let body = encode_request(images, target, kind, false)?;
        single_scores(self.post(&body)?)
    }

    pub fn score_all(&self, images: &[Image], kind: ScoreKind) -> Result<Vec<Vec<f64>>, ScorerError> {
        let body = encode_request(images, 0, kind, true)?;
        all_scores(self.post(&body)?)
    }

    fn post(&self, body: &[u8]) -> Result<ScoresPayload, ScorerError> {
        let _slot = self.acquire();
        let mut last = None;
        for attempt in 0..=self.retries {
            if attempt > 0 {
                log::warn!("retrying {} (attempt {attempt})", self.url);
                std::thread::sleep(Duration::from_millis(50 << attempt));
            }
            let result = self
                .agent
                .post(&self.url)
                .set("Content-Type", "application/octet-stream")
                .send_bytes(body);
            match result {
                Ok(resp) => {
                    let mut buf = Vec::new();
                    resp.into_reader()
                        .read_to_end(&mut buf)
                        .map_err(|e| ScorerError::transport(e.to_string()))?;
                    return decode_response(&buf);
                }
                Err(ureq::Error::Status(code, resp)) if code >= 500 => {
                    let text = resp.into_string().unwrap_or_default();
                    last = Some(ScorerError::transport(format!("HTTP {code}: {text}")));
                }
                Err(ureq::Error::Status(code, resp)) => {
                    let text = resp.into_string().unwrap_or_default();
                    return Err(ScorerError::protocol(format!("HTTP {code}: {text}")));
                }
                Err(e) => last = Some(ScorerError::transport(e.to_string())),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.max_in_flight {
            n = self.slot_freed.wait(n).unwrap();
        }
        *n += 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a RemoteClient);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.slot_freed.notify_one();
    }
}
