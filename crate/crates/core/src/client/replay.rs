//! Replays recorded request/response exchanges.
//!
//! A fixture is a JSON array of exchanges:
//!
//! ```json
//! [{"method": "POST", "path": "/summarize", "request": {...}, "status": 200, "response": {...}}]
//! ```
//!
//! Requests must arrive in recorded order and match the recorded body
//! exactly; anything else fails with [`TransportError::Decode`].

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Transport, TransportError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    #[serde(default = "post")]
    pub method: String,
    pub path: String,
    #[serde(default)]
    pub request: Value,
    #[serde(default = "ok")]
    pub status: u16,
    pub response: Value,
}

fn post() -> String {
    "POST".into()
}

fn ok() -> u16 {
    200
}

pub struct ReplayTransport {
    exchanges: Vec<Exchange>,
    cursor: Mutex<usize>,
}

impl ReplayTransport {
    pub fn new(exchanges: Vec<Exchange>) -> Self {
        ReplayTransport {
            exchanges,
            cursor: Mutex::new(0),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let exchanges = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(ReplayTransport::new(exchanges))
    }

    pub fn remaining(&self) -> usize {
        self.exchanges.len() - *self.cursor.lock().unwrap()
    }

    fn next(&self, method: &str, path: &str, body: Option<&Value>) -> Result<Value, TransportError> {
        let mut cursor = self.cursor.lock().unwrap();
        let ex = self
            .exchanges
            .get(*cursor)
            .ok_or_else(|| TransportError::Decode(format!("no recorded exchange for {method} {path}")))?;
        if ex.method != method || ex.path != path {
            return Err(TransportError::Decode(format!(
                "expected {} {}, got {method} {path}",
                ex.method, ex.path
            )));
        }
        if let Some(body) = body {
            if *body != ex.request {
                return Err(TransportError::Decode(format!("request body for {path} differs from recording")));
            }
        }
        *cursor += 1;
        if (200..300).contains(&ex.status) {
            Ok(ex.response.clone())
        } else {
            Err(TransportError::status(ex.status, ex.response.to_string()))
        }
    }
}

impl Transport for ReplayTransport {
    fn post_json(&self, path: &str, body: &Value) -> Result<Value, TransportError> {
        self.next("POST", path, Some(body))
    }

    fn get_json(&self, path: &str) -> Result<Value, TransportError> {
        self.next("GET", path, None)
    }
}
