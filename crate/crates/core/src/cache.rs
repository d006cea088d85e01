//! Content-addressed, append-only store of backend replies.
//!
//! One JSON record per line. Reads go through an in-memory index; appends
//! are serialized through a single file handle. A truncated final line (an
//! interrupted append) is ignored on load.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::Scene;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: corrupt cache record: {message}")]
    Corrupt { path: String, line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Scene,
    Visibility,
    Answer,
    Rating,
}

impl Capability {
    pub fn as_str(self) -> &'static str {
        match self {
            Capability::Scene => "scene",
            Capability::Visibility => "visibility",
            Capability::Answer => "answer",
            Capability::Rating => "rating",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum StoredReply {
    Scene(Scene),
    Visible(bool),
    Selection(Vec<String>),
    Rating(u8),
    /// The image could not be answered; the reason is kept for audit.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub cache_key: String,
    pub capability: Capability,
    pub image_id: String,
    pub question_id: String,
    pub reply: StoredReply,
    pub transcript: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl CachedResponse {
    pub fn transcript_digest(&self) -> String {
        hex::encode(Sha256::digest(self.transcript.as_bytes()))
    }
}

/// Digest identifying one backend request.
pub fn cache_key(backend_id: &str, capability: Capability, image_id: &str, question_id: &str, options_digest: &str) -> String {
    let mut h = Sha256::new();
    for part in [backend_id, capability.as_str(), image_id, question_id, options_digest] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Digest over a prompt text and the labels offered with it.
pub fn options_digest(text: &str, options: &[String]) -> String {
    let mut h = Sha256::new();
    h.update((text.len() as u64).to_le_bytes());
    h.update(text.as_bytes());
    for o in options {
        h.update((o.len() as u64).to_le_bytes());
        h.update(o.as_bytes());
    }
    hex::encode(h.finalize())
}

pub struct ResponseCache {
    path: Option<PathBuf>,
    index: RwLock<HashMap<String, CachedResponse>>,
    file: Mutex<Option<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            index: RwLock::new(HashMap::new()),
            file: Mutex::new(None),
        }
    }

    /// Opens (creating if needed) the cache file at `path`.
    pub fn open(path: &Path) -> Result<Self, CacheError> {
        let io = |source| CacheError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let mut index = HashMap::new();
        let mut valid_len = 0u64;
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(io)?);
            let mut lines = reader.split(b'\n').enumerate().peekable();
            while let Some((i, line)) = lines.next() {
                let line = line.map_err(io)?;
                let last = lines.peek().is_none();
                if line.iter().all(u8::is_ascii_whitespace) {
                    valid_len += line.len() as u64 + 1;
                    continue;
                }
                match serde_json::from_slice::<CachedResponse>(&line) {
                    Ok(record) => {
                        index.insert(record.cache_key.clone(), record);
                        valid_len += line.len() as u64 + 1;
                    }
                    Err(_) if last => break,
                    Err(e) => {
                        return Err(CacheError::Corrupt {
                            path: path.display().to_string(),
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        // drop a torn trailing record so the next append starts on a fresh line
        let on_disk = file.metadata().map_err(io)?.len();
        if on_disk > valid_len {
            file.set_len(valid_len).map_err(io)?;
        } else if on_disk + 1 == valid_len {
            file.write_all(b"\n").map_err(io)?;
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            index: RwLock::new(index),
            file: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<CachedResponse> {
        self.index.read().expect("cache index poisoned").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("cache index poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores `record`. The first record stored under a key wins.
    pub fn put(&self, record: CachedResponse) -> Result<CachedResponse, CacheError> {
        let mut file = self.file.lock().expect("cache file poisoned");
        if let Some(existing) = self.get(&record.cache_key) {
            return Ok(existing);
        }
        if let Some(f) = file.as_mut() {
            let mut line = serde_json::to_vec(&record).expect("cache record serializes");
            line.push(b'\n');
            f.write_all(&line)
                .and_then(|_| f.flush())
                .map_err(|source| CacheError::Io {
                    path: self.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
                    source,
                })?;
        }
        self.index
            .write()
            .expect("cache index poisoned")
            .insert(record.cache_key.clone(), record.clone());
        Ok(record)
    }
}

pub fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}
