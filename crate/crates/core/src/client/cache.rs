use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde_json::Value;
use sha2::{Digest, Sha256};

use super::ClientError;

/// Hex SHA-256 of the canonical JSON form of `request`.
///
/// `serde_json::Value` objects keep their keys sorted, so two requests that
/// differ only in key order share a key.
pub fn cache_key(request: &Value) -> String {
    let canonical = serde_json::to_string(request).expect("json value serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

pub trait ResponseCache: Send + Sync {
    fn get(&self, key: &str) -> Result<Option<Value>, ClientError>;
    fn put(&self, key: &str, value: &Value) -> Result<(), ClientError>;
}

#[derive(Debug, Default)]
pub struct NoCache;

impl ResponseCache for NoCache {
    fn get(&self, _key: &str) -> Result<Option<Value>, ClientError> {
        Ok(None)
    }

    fn put(&self, _key: &str, _value: &Value) -> Result<(), ClientError> {
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct MemoryCache {
    entries: RwLock<HashMap<String, Value>>,
}

impl MemoryCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ResponseCache for MemoryCache {
    fn get(&self, key: &str) -> Result<Option<Value>, ClientError> {
        Ok(self.entries.read().unwrap().get(key).cloned())
    }

    fn put(&self, key: &str, value: &Value) -> Result<(), ClientError> {
        self.entries.write().unwrap().insert(key.to_string(), value.clone());
        Ok(())
    }
}

/// One JSON file per key under a directory: `<dir>/<key>.json`.
#[derive(Debug, Clone)]
pub struct DiskCache {
    dir: PathBuf,
}

impl DiskCache {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ClientError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| ClientError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(DiskCache { dir })
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }
}

impl ResponseCache for DiskCache {
    fn get(&self, key: &str) -> Result<Option<Value>, ClientError> {
        match fs::read_to_string(self.path(key)) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| ClientError::Cache(format!("corrupt entry {key}: {e}"))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(ClientError::Cache(e.to_string())),
        }
    }

    fn put(&self, key: &str, value: &Value) -> Result<(), ClientError> {
        // write-then-rename so readers never see a partial record
        let tmp = self.dir.join(format!(".{key}.{}.tmp", std::process::id()));
        fs::write(&tmp, serde_json::to_vec(value).expect("json value serializes"))
            .and_then(|_| fs::rename(&tmp, self.path(key)))
            .map_err(|e| ClientError::Cache(e.to_string()))
    }
}
