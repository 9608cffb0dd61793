//! On-disk store of provider responses: one JSON file per record, named by
//! the hex digest of its request, plus an append-only `index.tsv`.

use std::fs::{self, File, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::PromptVariant;

const INDEX_FILE: &str = "index.tsv";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt cache record {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

/// Digest of everything that determines a response.
pub fn cache_key(
    provider_id: &str,
    model_id: &str,
    prompt: &str,
    temperature: f64,
    sample: u32,
) -> String {
    let mut h = Sha256::new();
    for field in [provider_id.as_bytes(), model_id.as_bytes(), prompt.as_bytes()] {
        h.update((field.len() as u64).to_le_bytes());
        h.update(field);
    }
    h.update(temperature.to_bits().to_le_bytes());
    h.update(sample.to_le_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub key: String,
    pub provider_id: String,
    pub model_id: String,
    pub paper_id: String,
    pub variant: PromptVariant,
    pub sample: u32,
    pub temperature: f64,
    /// Seconds since the Unix epoch when the request was sent.
    pub requested_at: u64,
    pub raw_response: String,
    pub parse_status: String,
}

#[derive(Debug)]
pub struct CacheStore {
    dir: PathBuf,
    // serializes writers within this process
    write_lock: Mutex<()>,
}

impl CacheStore {
    /// Opens a store, creating the directory if needed.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| CacheError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Self {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    /// Opens an existing store without creating anything.
    pub fn open_existing(dir: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(CacheError::Io {
                source: std::io::Error::new(ErrorKind::NotFound, "cache directory does not exist"),
                path: dir,
            });
        }
        Ok(Self {
            dir,
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn record_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.record_path(key).is_file()
    }

    pub fn get(&self, key: &str) -> Result<Option<CompletionRecord>, CacheError> {
        let path = self.record_path(key);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(CacheError::Io { path, source }),
        };
        let rec: CompletionRecord =
            serde_json::from_str(&text).map_err(|e| CacheError::Corrupt {
                path: path.clone(),
                message: e.to_string(),
            })?;
        if rec.key != key {
            return Err(CacheError::Corrupt {
                path,
                message: format!("record key {} does not match file name", rec.key),
            });
        }
        Ok(Some(rec))
    }

    /// Stores a new record. Existing records are never replaced; returns
    /// `false` when the key was already present.
    pub fn put(&self, rec: &CompletionRecord) -> Result<bool, CacheError> {
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        let path = self.record_path(&rec.key);
        let io = |path: &Path, source| CacheError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut file = match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == ErrorKind::AlreadyExists => return Ok(false),
            Err(e) => return Err(io(&path, e)),
        };
        let mut body = serde_json::to_string_pretty(rec).expect("records serialize");
        body.push('\n');
        file.write_all(body.as_bytes()).map_err(|e| io(&path, e))?;
        let index = self.dir.join(INDEX_FILE);
        let mut idx: File = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index)
            .map_err(|e| io(&index, e))?;
        writeln!(
            idx,
            "{}\t{}\t{}\t{}\t{}",
            rec.key, rec.provider_id, rec.variant, rec.paper_id, rec.sample
        )
        .map_err(|e| io(&index, e))?;
        Ok(true)
    }
}
