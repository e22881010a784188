//! Append-only embedding cache.
//!
//! On disk the cache is JSON Lines, one record per line:
//!
//! ```text
//! {"key":"<64 hex chars>","dim":8,"values":[0.1,-0.25,...]}
//! ```
//!
//! `key` is the SHA-256 of `endpoint \0 model \0 text`. Numbers are written in
//! shortest round-trip form, so a reload reproduces every value bit for bit.
//! A torn final line (interrupted append) is ignored on load.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EmbedError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub dim: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct EmbeddingCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, Vec<f64>>>,
    writer: Mutex<Option<File>>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        EmbeddingCache::default()
    }

    pub fn open(path: &Path) -> Result<Self, EmbedError> {
        let cache_err = |e: std::io::Error| EmbedError::Cache(format!("{}: {e}", path.display()));
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(cache_err)?);
            let lines: Vec<String> = reader.lines().collect::<Result<_, _>>().map_err(cache_err)?;
            let last = lines.len().saturating_sub(1);
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(line) {
                    Ok(rec) if rec.values.len() == rec.dim => {
                        entries.insert(rec.key, rec.values);
                    }
                    _ if i == last => {}
                    _ => {
                        return Err(EmbedError::Cache(format!(
                            "{}: corrupt record on line {}",
                            path.display(),
                            i + 1
                        )))
                    }
                }
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(cache_err)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(cache_err)?;
        Ok(EmbeddingCache {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn key(endpoint: &str, model: &str, text: &str) -> String {
        let mut h = Sha256::new();
        h.update(endpoint.as_bytes());
        h.update([0]);
        h.update(model.as_bytes());
        h.update([0]);
        h.update(text.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<Vec<f64>> {
        self.entries.read().unwrap().get(key).cloned()
    }

    pub fn insert(&self, key: String, values: Vec<f64>) -> Result<(), EmbedError> {
        let mut writer = self.writer.lock().unwrap();
        if let Some(file) = writer.as_mut() {
            let rec = CacheRecord {
                key: key.clone(),
                dim: values.len(),
                values,
            };
            let mut line = serde_json::to_string(&rec).expect("record serializes");
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| EmbedError::Cache(e.to_string()))?;
            self.entries.write().unwrap().insert(key, rec.values);
        } else {
            self.entries.write().unwrap().insert(key, values);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn persists_and_reloads_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/cache.jsonl");
        let k = EmbeddingCache::key("http://e", "m", "text");
        {
            let c = EmbeddingCache::open(&path).unwrap();
            c.insert(k.clone(), vec![0.1, 1.0 / 3.0, -2.5e-300]).unwrap();
        }
        let c = EmbeddingCache::open(&path).unwrap();
        assert_eq!(c.get(&k).unwrap(), vec![0.1, 1.0 / 3.0, -2.5e-300]);
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn ignores_torn_last_line_but_not_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(&path, "{\"key\":\"a\",\"dim\":1,\"values\":[1.0]}\n{\"key\":\"b\",\"di").unwrap();
        assert_eq!(EmbeddingCache::open(&path).unwrap().len(), 1);
        std::fs::write(&path, "garbage\n{\"key\":\"a\",\"dim\":1,\"values\":[1.0]}\n").unwrap();
        assert!(EmbeddingCache::open(&path).is_err());
    }

    #[test]
    fn keys_separate_endpoint_model_and_text() {
        let a = EmbeddingCache::key("e", "m", "t");
        assert_eq!(a.len(), 64);
        assert_ne!(a, EmbeddingCache::key("e", "m2", "t"));
        assert_ne!(a, EmbeddingCache::key("e2", "m", "t"));
        assert_ne!(EmbeddingCache::key("ab", "c", "t"), EmbeddingCache::key("a", "bc", "t"));
    }
}
