//! Append-only response cache: one JSON record per request hash, sharded by
//! the first two hex digits.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::LlmExchange;
use crate::error::{Error, Result};

const META_FILE: &str = "cache-meta.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CacheMeta {
    backend_id: String,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    /// Opens (creating if needed) a cache owned by `backend_id`. A cache
    /// directory written by one backend cannot be reused by another.
    pub fn open(root: &Path, backend_id: &str) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let meta_path = root.join(META_FILE);
        let meta = CacheMeta {
            backend_id: backend_id.to_string(),
        };
        if meta_path.exists() {
            let existing: CacheMeta = crate::dataset::read_json(&meta_path)?;
            if existing != meta {
                return Err(Error::Config(format!(
                    "cache {} belongs to backend `{}`, not `{}`",
                    root.display(),
                    existing.backend_id,
                    backend_id
                )));
            }
        } else {
            crate::dataset::write_json(&meta_path, &meta)?;
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    /// Opens an existing cache for replay without checking ownership.
    pub fn open_existing(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::MissingIntermediate(root.to_path_buf()));
        }
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    fn path_for(&self, hash: &str) -> PathBuf {
        self.root.join(&hash[..2]).join(format!("{hash}.json"))
    }

    pub fn get(&self, hash: &str) -> Result<Option<LlmExchange>> {
        let path = self.path_for(hash);
        match std::fs::read_to_string(&path) {
            Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Write-once insert. If another writer got there first, its record wins
    /// and is returned.
    pub fn put(&self, exchange: &LlmExchange) -> Result<LlmExchange> {
        let path = self.path_for(&exchange.prompt_hash);
        let dir = path.parent().expect("sharded path has a parent");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut stored = exchange.clone();
        stored.verdict = None;
        let body = serde_json::to_vec_pretty(&stored)?;
        // write to a temp file, then hard-link into place: link fails if the target exists
        let tmp = dir.join(format!(".{}.{}.tmp", exchange.prompt_hash, std::process::id()));
        {
            let mut f = OpenOptions::new()
                .write(true)
                .create(true)
                .truncate(true)
                .open(&tmp)
                .map_err(|e| Error::io(&tmp, e))?;
            f.write_all(&body).map_err(|e| Error::io(&tmp, e))?;
        }
        let linked = std::fs::hard_link(&tmp, &path);
        let _ = std::fs::remove_file(&tmp);
        match linked {
            Ok(()) => Ok(stored),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => self
                .get(&exchange.prompt_hash)?
                .ok_or_else(|| Error::Invariant(format!("cache record {} vanished", exchange.prompt_hash))),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn len(&self) -> Result<usize> {
        let mut count = 0;
        for shard in std::fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))? {
            let shard = shard.map_err(|e| Error::io(&self.root, e))?.path();
            if shard.is_dir() {
                count += std::fs::read_dir(&shard)
                    .map_err(|e| Error::io(&shard, e))?
                    .filter_map(|e| e.ok())
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count();
            }
        }
        Ok(count)
    }

    pub fn is_empty(&self) -> Result<bool> {
        Ok(self.len()? == 0)
    }
}
