//! File writing with content digests.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteSummary {
    pub path: PathBuf,
    pub count: usize,
    pub bytes: u64,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8], count: usize) -> io::Result<WriteSummary> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(WriteSummary {
        path: path.to_path_buf(),
        count,
        bytes: bytes.len() as u64,
        sha256: sha256_hex(bytes),
    })
}

/// Serializes each item as one compact JSON line (LF endings).
pub fn write_json_lines<T: Serialize>(path: &Path, items: &[T]) -> io::Result<WriteSummary> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(io::Error::other)?;
        buf.push(b'\n');
    }
    write_bytes(path, &buf, items.len())
}
