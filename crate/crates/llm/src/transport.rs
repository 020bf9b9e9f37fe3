// SPDX-License-Identifier: Apache-2.0

//! HTTP transports: live, recording and replay.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpRequest {
    pub url: String,
    /// Exact request body bytes (JSON text).
    pub body: String,
    /// Sent as a bearer token; never recorded.
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl HttpRequest {
    /// Stable identity of a request for replay lookups.
    pub fn key(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.url.as_bytes());
        h.update([0]);
        h.update(self.body.as_bytes());
        hex::encode(&h.finalize()[..16])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
    /// Round-trip time as observed when the response was first received.
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("cannot reach endpoint: {0}")]
    Unreachable(String),
    #[error("no recorded response for request {key} to {url}")]
    NotRecorded { key: String, url: String },
    #[error("recording failed: {0}")]
    Io(String),
}

pub trait Transport: Send + Sync {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

/// Live HTTP over `ureq`.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        UreqTransport { agent }
    }
}

impl Transport for UreqTransport {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let start = Instant::now();
        let mut call = self.agent.post(&req.url).header("Content-Type", "application/json");
        if let Some(key) = &req.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send(req.body.as_bytes()).map_err(|e| TransportError::Unreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| TransportError::Unreachable(e.to_string()))?;
        Ok(HttpResponse { status, body, elapsed_ms: start.elapsed().as_millis() as u64 })
    }
}

/// One line of a recording file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub key: String,
    pub request: HttpRequest,
    pub response: HttpResponse,
}

/// Forwards to `inner` and appends every exchange to a JSONL file.
pub struct RecordingTransport<T> {
    inner: T,
    out: Mutex<File>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn create(inner: T, path: &Path) -> std::io::Result<Self> {
        let out = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RecordingTransport { inner, out: Mutex::new(out) })
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let response = self.inner.send(req)?;
        let line = serde_json::to_string(&Exchange { key: req.key(), request: req.clone(), response: response.clone() })
            .map_err(|e| TransportError::Io(e.to_string()))?;
        let mut out = self.out.lock().expect("recording lock");
        writeln!(out, "{line}").map_err(|e| TransportError::Io(e.to_string()))?;
        Ok(response)
    }
}

/// Serves responses from a recording. Repeated identical requests get the
/// recorded responses in order; the last one repeats once exhausted.
pub struct ReplayTransport {
    responses: Mutex<HashMap<String, VecDeque<HttpResponse>>>,
}

impl ReplayTransport {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut responses: HashMap<String, VecDeque<HttpResponse>> = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ex: Exchange = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            responses.entry(ex.key).or_default().push_back(ex.response);
        }
        Ok(ReplayTransport { responses: Mutex::new(responses) })
    }
}

impl Transport for ReplayTransport {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let key = req.key();
        let mut map = self.responses.lock().expect("replay lock");
        let queue = map.get_mut(&key).filter(|q| !q.is_empty()).ok_or_else(|| TransportError::NotRecorded { key, url: req.url.clone() })?;
        if queue.len() > 1 {
            Ok(queue.pop_front().expect("non-empty"))
        } else {
            Ok(queue[0].clone())
        }
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        (**self).send(req)
    }
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn send(&self, req: &HttpRequest) -> Result<HttpResponse, TransportError> {
        (**self).send(req)
    }
}
