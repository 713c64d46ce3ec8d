//! Content-addressed intermediate cache: keys are hashes of the exact
//! inputs of each stage, entries carry their own digest, writes are atomic
//! (write-then-rename), and a corrupt entry is treated as a miss so the
//! stage recomputes transparently.

use crate::RunnerError;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a stage's resolved inputs: the stage name plus the canonical
/// JSON of every component, in order.
pub fn content_key<T: Serialize>(stage: &str, parts: &[&T]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(stage.as_bytes());
    for part in parts {
        hasher.update(b"\x1f");
        hasher.update(serde_json::to_vec(part).expect("cache key serializes"));
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash builder for heterogeneous inputs.
pub struct KeyBuilder {
    hasher: Sha256,
}

impl KeyBuilder {
    pub fn new(stage: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(stage.as_bytes());
        Self { hasher }
    }

    pub fn field<T: Serialize>(mut self, value: &T) -> Self {
        self.hasher.update(b"\x1f");
        self.hasher.update(serde_json::to_vec(value).expect("cache key serializes"));
        self
    }

    pub fn raw(mut self, value: &str) -> Self {
        self.hasher.update(b"\x1f");
        self.hasher.update(value.as_bytes());
        self
    }

    pub fn finish(self) -> String {
        self.hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub struct Cache {
    root: PathBuf,
    /// Corrupt entries seen while reading, for the run summary.
    pub corrupt_hits: std::sync::Mutex<Vec<String>>,
}

impl Cache {
    pub fn open(root: &Path) -> Result<Self, RunnerError> {
        std::fs::create_dir_all(root).map_err(|e| crate::io_err(e, root))?;
        Ok(Self { root: root.to_path_buf(), corrupt_hits: std::sync::Mutex::new(Vec::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry_path(&self, kind: &str, key: &str) -> PathBuf {
        self.root.join(kind).join(format!("{key}.bin"))
    }

    /// Looks an entry up, verifying its digest; a corrupt file is removed
    /// and reported as a miss.
    pub fn get(&self, kind: &str, key: &str) -> Option<Vec<u8>> {
        let path = self.entry_path(kind, key);
        let bytes = std::fs::read(&path).ok()?;
        if bytes.len() < 32 {
            self.note_corrupt(&path);
            return None;
        }
        let (digest, payload) = bytes.split_at(32);
        if Sha256::digest(payload).as_slice() != digest {
            self.note_corrupt(&path);
            return None;
        }
        Some(payload.to_vec())
    }

    fn note_corrupt(&self, path: &Path) {
        let _ = std::fs::remove_file(path);
        self.corrupt_hits.lock().unwrap().push(path.display().to_string());
        eprintln!("warning: corrupt cache entry {} removed; recomputing", path.display());
    }

    /// Stores an entry atomically: digest-prefixed payload written to a
    /// temporary file, then renamed into place.
    pub fn put(&self, kind: &str, key: &str, payload: &[u8]) -> Result<(), RunnerError> {
        let path = self.entry_path(kind, key);
        let dir = path.parent().unwrap();
        std::fs::create_dir_all(dir).map_err(|e| crate::io_err(e, dir))?;
        let mut bytes = Vec::with_capacity(payload.len() + 32);
        bytes.extend_from_slice(Sha256::digest(payload).as_slice());
        bytes.extend_from_slice(payload);
        let tmp = dir.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::write(&tmp, &bytes).map_err(|e| crate::io_err(e, &tmp))?;
        std::fs::rename(&tmp, &path).map_err(|e| crate::io_err(e, &path))?;
        Ok(())
    }

    pub fn contains(&self, kind: &str, key: &str) -> bool {
        self.entry_path(kind, key).exists()
    }

    /// Computes or loads: the closure runs only on a miss.
    pub fn get_or_put(
        &self,
        kind: &str,
        key: &str,
        compute: impl FnOnce() -> Result<Vec<u8>, RunnerError>,
    ) -> Result<(Vec<u8>, bool), RunnerError> {
        if let Some(hit) = self.get(kind, key) {
            return Ok((hit, true));
        }
        let payload = compute()?;
        self.put(kind, key, &payload)?;
        Ok((payload, false))
    }

    /// Verifies every entry's digest; returns (ok, corrupt) paths.
    pub fn verify(&self) -> Result<(Vec<PathBuf>, Vec<PathBuf>), RunnerError> {
        let mut ok = Vec::new();
        let mut corrupt = Vec::new();
        for entry in walk(&self.root)? {
            let bytes = std::fs::read(&entry).map_err(|e| crate::io_err(e, &entry))?;
            let valid = bytes.len() >= 32 && {
                let (digest, payload) = bytes.split_at(32);
                Sha256::digest(payload).as_slice() == digest
            };
            if valid {
                ok.push(entry);
            } else {
                corrupt.push(entry);
            }
        }
        Ok((ok, corrupt))
    }

    /// Removes entries last modified more than `max_age` ago (everything
    /// when `None`); returns (count, bytes) freed.
    pub fn gc(&self, max_age: Option<std::time::Duration>) -> Result<(usize, u64), RunnerError> {
        let now = std::time::SystemTime::now();
        let mut count = 0usize;
        let mut bytes = 0u64;
        for entry in walk(&self.root)? {
            let meta = std::fs::metadata(&entry).map_err(|e| crate::io_err(e, &entry))?;
            let stale = match max_age {
                None => true,
                Some(age) => meta
                    .modified()
                    .ok()
                    .and_then(|m| now.duration_since(m).ok())
                    .is_some_and(|elapsed| elapsed > age),
            };
            if stale {
                bytes += meta.len();
                count += 1;
                std::fs::remove_file(&entry).map_err(|e| crate::io_err(e, &entry))?;
            }
        }
        Ok((count, bytes))
    }
}

fn walk(root: &Path) -> Result<Vec<PathBuf>, RunnerError> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let reader = match std::fs::read_dir(&dir) {
            Ok(r) => r,
            Err(_) => continue,
        };
        for entry in reader {
            let entry = entry.map_err(|e| crate::io_err(e, &dir))?;
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "bin") {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_integrity() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path()).unwrap();
        cache.put("corpus", "abc", b"payload").unwrap();
        assert_eq!(cache.get("corpus", "abc").unwrap(), b"payload");

        // corrupt the entry: read must miss and remove it
        let path = dir.path().join("corpus").join("abc.bin");
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x55;
        std::fs::write(&path, bytes).unwrap();
        assert!(cache.get("corpus", "abc").is_none());
        assert!(!path.exists());
        assert_eq!(cache.corrupt_hits.lock().unwrap().len(), 1);
    }

    #[test]
    fn get_or_put_runs_compute_once() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path()).unwrap();
        let mut calls = 0;
        let (v1, hit1) = cache
            .get_or_put("model", "k", || {
                calls += 1;
                Ok(b"value".to_vec())
            })
            .unwrap();
        assert!(!hit1);
        let (v2, hit2) = cache
            .get_or_put("model", "k", || {
                calls += 1;
                Ok(b"other".to_vec())
            })
            .unwrap();
        assert!(hit2);
        assert_eq!(v1, v2);
        assert_eq!(calls, 1);
    }

    #[test]
    fn keys_change_with_any_input_field() {
        #[derive(Serialize)]
        struct In {
            a: u64,
            b: String,
        }
        let base = content_key("stage", &[&In { a: 1, b: "x".into() }]);
        assert_ne!(base, content_key("stage", &[&In { a: 2, b: "x".into() }]));
        assert_ne!(base, content_key("stage", &[&In { a: 1, b: "y".into() }]));
        assert_ne!(base, content_key("other", &[&In { a: 1, b: "x".into() }]));
        assert_eq!(base, content_key("stage", &[&In { a: 1, b: "x".into() }]));
    }

    #[test]
    fn verify_and_gc() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path()).unwrap();
        cache.put("a", "k1", b"one").unwrap();
        cache.put("b", "k2", b"two").unwrap();
        let (ok, corrupt) = cache.verify().unwrap();
        assert_eq!(ok.len(), 2);
        assert!(corrupt.is_empty());

        std::fs::write(dir.path().join("a").join("k1.bin"), b"junk").unwrap();
        let (ok, corrupt) = cache.verify().unwrap();
        assert_eq!(ok.len(), 1);
        assert_eq!(corrupt.len(), 1);

        let (count, _) = cache.gc(None).unwrap();
        assert_eq!(count, 2);
        assert!(cache.get("b", "k2").is_none());
    }
}
