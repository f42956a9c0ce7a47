//! Content-addressed JSON file store shared by the embedding and
//! completion caches.
//!
//! Entries live at `<root>/<k[0..2]>/<k>.json`. Writes go through a temp
//! file in the same directory followed by a rename, so readers never see a
//! partially written entry. Writers are serialized through a mutex.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("cache io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt cache entry {path}: {source}")]
    Corrupt {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug)]
pub struct ContentStore {
    root: PathBuf,
    write_lock: Mutex<()>,
}

impl ContentStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|source| StoreError::Io {
            path: root.clone(),
            source,
        })?;
        Ok(Self {
            root,
            write_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Derive a key from ordered parts. Parts are length-prefixed so that
    /// `["ab", "c"]` and `["a", "bc"]` never collide.
    pub fn key(parts: &[&str]) -> String {
        let mut buf = Vec::new();
        for part in parts {
            buf.extend_from_slice(&(part.len() as u64).to_le_bytes());
            buf.extend_from_slice(part.as_bytes());
        }
        crate::sha256_hex(buf)
    }

    fn path_for(&self, key: &str) -> PathBuf {
        let shard = &key[..key.len().min(2)];
        self.root.join(shard).join(format!("{key}.json"))
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, StoreError> {
        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(StoreError::Io { path, source }),
        };
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|source| StoreError::Corrupt { path, source })
    }

    pub fn put<T: Serialize>(&self, key: &str, value: &T) -> Result<(), StoreError> {
        let path = self.path_for(key);
        let dir = path.parent().expect("entry path has a shard directory");
        let io_err = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        let bytes = serde_json::to_vec(value).map_err(|source| StoreError::Corrupt {
            path: path.clone(),
            source,
        })?;
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        fs::create_dir_all(dir).map_err(io_err)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
        tmp.write_all(&bytes).map_err(io_err)?;
        tmp.persist(&path).map_err(|e| io_err(e.error))?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        walk_json(&self.root)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn walk_json(dir: &Path) -> usize {
    let Ok(entries) = fs::read_dir(dir) else {
        return 0;
    };
    entries
        .flatten()
        .map(|e| {
            let p = e.path();
            if p.is_dir() {
                walk_json(&p)
            } else if p.extension().is_some_and(|x| x == "json") {
                1
            } else {
                0
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_then_get() {
        let dir = tempfile::tempdir().unwrap();
        let store = ContentStore::open(dir.path()).unwrap();
        let key = ContentStore::key(&["a", "b"]);
        assert_eq!(store.get::<Vec<f64>>(&key).unwrap(), None);
        store.put(&key, &vec![1.0, 0.1 + 0.2]).unwrap();
        assert_eq!(store.get::<Vec<f64>>(&key).unwrap(), Some(vec![1.0, 0.1 + 0.2]));
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn keys_are_length_prefixed() {
        assert_ne!(ContentStore::key(&["ab", "c"]), ContentStore::key(&["a", "bc"]));
    }
}
