use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ClientError;

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    prompt_hash: String,
    raw: String,
}

/// On-disk completion cache: one JSON file per prompt hash at
/// `root/<h[0..2]>/<h[2..4]>/<h>.json`, written by temp-file rename.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

fn is_hash(h: &str) -> bool {
    h.len() == 64 && h.bytes().all(|b| b.is_ascii_hexdigit())
}

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ClientError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| ClientError::Io {
            path: root.clone(),
            source: e,
        })?;
        Ok(ResponseCache { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, prompt_hash: &str) -> PathBuf {
        self.root
            .join(&prompt_hash[0..2])
            .join(&prompt_hash[2..4])
            .join(format!("{prompt_hash}.json"))
    }

    pub fn get(&self, prompt_hash: &str) -> Result<Option<String>, ClientError> {
        if !is_hash(prompt_hash) {
            return Ok(None);
        }
        let path = self.path_for(prompt_hash);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(ClientError::Io { path, source }),
        };
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) if entry.prompt_hash == prompt_hash => Ok(Some(entry.raw)),
            _ => Err(ClientError::CacheCorrupt(path)),
        }
    }

    pub fn put(&self, prompt_hash: &str, raw: &str) -> Result<(), ClientError> {
        if !is_hash(prompt_hash) {
            return Err(ClientError::InvalidConfig(format!(
                "not a prompt hash: `{prompt_hash}`"
            )));
        }
        let path = self.path_for(prompt_hash);
        let dir = path.parent().expect("cache path has a parent");
        let io = |source| ClientError::Io {
            path: path.clone(),
            source,
        };
        fs::create_dir_all(dir).map_err(io)?;
        let entry = CacheEntry {
            prompt_hash: prompt_hash.to_string(),
            raw: raw.to_string(),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        serde_json::to_writer(&mut tmp, &entry).map_err(|e| io(e.into()))?;
        tmp.flush().map_err(io)?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        Ok(())
    }
}
