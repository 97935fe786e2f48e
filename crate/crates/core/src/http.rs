//! Minimal blocking HTTP plumbing shared by the chat gateway and the remote
//! KB clients: a swappable transport, an in-flight admission gate and the
//! retry/backoff loop.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

#[derive(Debug, Clone)]
pub struct HttpRequest {
    pub method: Method,
    pub url: String,
    pub query: Vec<(String, String)>,
    pub headers: Vec<(String, String)>,
    pub body: Option<String>,
    pub timeout: Duration,
}

impl HttpRequest {
    pub fn get(url: impl Into<String>, query: Vec<(String, String)>, timeout: Duration) -> Self {
        Self {
            method: Method::Get,
            url: url.into(),
            query,
            headers: Vec::new(),
            body: None,
            timeout,
        }
    }

    pub fn post_json(url: impl Into<String>, body: String, timeout: Duration) -> Self {
        Self {
            method: Method::Post,
            url: url.into(),
            query: Vec::new(),
            headers: vec![("Content-Type".into(), "application/json".into())],
            body: Some(body),
            timeout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("transport error: {0}")]
    Other(String),
}

/// One HTTP exchange. Implementations must be shareable across threads.
pub trait Transport: Send + Sync {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .user_agent(concat!("ela/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| TransportError::Other(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for ReqwestTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let mut builder = match request.method {
            Method::Get => self.client.get(&request.url),
            Method::Post => self.client.post(&request.url),
        };
        if !request.query.is_empty() {
            builder = builder.query(&request.query);
        }
        for (name, value) in &request.headers {
            builder = builder.header(name, value);
        }
        if let Some(body) = &request.body {
            builder = builder.body(body.clone());
        }
        let response = builder.timeout(request.timeout).send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout
            } else if e.is_connect() {
                TransportError::Connect(e.to_string())
            } else {
                TransportError::Other(e.to_string())
            }
        })?;
        let status = response.status().as_u16();
        let body = response
            .text()
            .map_err(|e| TransportError::Other(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Counting semaphore bounding the number of outstanding requests.
#[derive(Debug)]
pub struct AdmissionGate {
    limit: usize,
    in_flight: Mutex<usize>,
    released: Condvar,
}

pub struct Permit<'a> {
    gate: &'a AdmissionGate,
}

impl AdmissionGate {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            in_flight: Mutex::new(0),
            released: Condvar::new(),
        }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.limit {
            n = self.released.wait(n).unwrap();
        }
        *n += 1;
        Permit { gate: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.gate.in_flight.lock().unwrap() -= 1;
        self.gate.released.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub factor: f64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            factor: 2.0,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based). Jitter scales the
    /// exponential delay by a uniform factor in [0.5, 1.0].
    pub fn delay(&self, attempt: u32) -> Duration {
        let base = self.base_delay.as_secs_f64() * self.factor.powi(attempt as i32);
        let scaled = if self.jitter {
            base * rand::rng().random_range(0.5..=1.0)
        } else {
            base
        };
        Duration::from_secs_f64(scaled)
    }
}

#[derive(Debug, Clone, Error)]
#[error("gave up after {attempts} attempt(s): {message}")]
pub struct RetriesExhausted {
    pub attempts: u32,
    /// Status of the last response, if the last failure was an HTTP status.
    pub last_status: Option<u16>,
    pub message: String,
}

fn is_transient(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

/// Sends `request`, retrying timeouts, connection failures, 429 and 5xx.
/// Any other response, success or not, is returned to the caller.
pub fn send_with_retry(
    transport: &dyn Transport,
    gate: &AdmissionGate,
    policy: &RetryPolicy,
    request: &HttpRequest,
) -> Result<HttpResponse, RetriesExhausted> {
    let mut attempt = 0;
    loop {
        let outcome = {
            let _permit = gate.acquire();
            transport.send(request)
        };
        let (last_status, message) = match outcome {
            Ok(resp) if !is_transient(resp.status) => return Ok(resp),
            Ok(resp) => (Some(resp.status), format!("HTTP {}", resp.status)),
            Err(e) => (None, e.to_string()),
        };
        if attempt >= policy.max_retries {
            return Err(RetriesExhausted {
                attempts: attempt + 1,
                last_status,
                message,
            });
        }
        log::debug!("transient failure on {} ({message}), retrying", request.url);
        std::thread::sleep(policy.delay(attempt));
        attempt += 1;
    }
}


#[cfg(test)]
mod tests {
    use super::testing::CannedTransport;
    use super::*;

    fn fast() -> RetryPolicy {
        RetryPolicy {
            max_retries: 2,
            base_delay: Duration::from_millis(1),
            factor: 2.0,
            jitter: false,
        }
    }

    fn ok(status: u16) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse {
            status,
            body: String::new(),
        })
    }

    #[test]
    fn retries_transient_then_succeeds() {
        let t = CannedTransport::new(vec![ok(503), Err(TransportError::Timeout), ok(200)]);
        let req = HttpRequest::get("http://x", vec![], Duration::from_secs(1));
        let resp = send_with_retry(&t, &AdmissionGate::new(1), &fast(), &req).unwrap();
        assert_eq!(resp.status, 200);
        assert_eq!(t.requests.lock().unwrap().len(), 3);
    }

    #[test]
    fn exhausts_and_reports_last_status() {
        let t = CannedTransport::new(vec![ok(500), ok(429), ok(429)]);
        let req = HttpRequest::get("http://x", vec![], Duration::from_secs(1));
        let err = send_with_retry(&t, &AdmissionGate::new(1), &fast(), &req).unwrap_err();
        assert_eq!(err.attempts, 3);
        assert_eq!(err.last_status, Some(429));
    }

    #[test]
    fn non_transient_status_is_returned_immediately() {
        let t = CannedTransport::new(vec![ok(401)]);
        let req = HttpRequest::get("http://x", vec![], Duration::from_secs(1));
        let resp = send_with_retry(&t, &AdmissionGate::new(1), &fast(), &req).unwrap();
        assert_eq!(resp.status, 401);
    }

    #[test]
    fn backoff_grows_exponentially() {
        let p = RetryPolicy {
            jitter: false,
            ..RetryPolicy::default()
        };
        assert_eq!(p.delay(0), Duration::from_millis(500));
        assert_eq!(p.delay(2), Duration::from_millis(2000));
        let j = RetryPolicy::default().delay(1);
        assert!(j >= Duration::from_millis(500) && j <= Duration::from_millis(1000));
    }
}
