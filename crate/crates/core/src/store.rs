//! Two-tier KV-cache store: durable blob files on disk fronted by a
//! byte-bounded LRU memory tier.
//!
//! Disk layout under the store root:
//!
//! ```text
//! <root>/<model_hash:016x>/<fnv1a(doc_ids):016x>.rdkv
//! <root>/manifest.jsonl      one {model_hash, doc_ids, file, bytes} per put
//! ```
//!
//! Blobs are immutable once written. Writes go to a temp file and are
//! renamed into place, so readers never see a partial blob.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::codec::{self, hash_doc_ids, CodecError, KvBlob};
use crate::lru::ByteLru;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KvKey {
    pub model_hash: u64,
    pub doc_ids: Vec<u64>,
}

impl KvKey {
    pub fn new(model_hash: u64, doc_ids: Vec<u64>) -> Self {
        debug_assert!(!doc_ids.is_empty(), "KvKey needs at least one doc id");
        Self { model_hash, doc_ids }
    }

    pub fn for_blob(blob: &KvBlob) -> Self {
        Self::new(blob.header.model_hash, blob.header.doc_ids.clone())
    }

    pub fn file_name(&self) -> String {
        format!("{:016x}.rdkv", hash_doc_ids(&self.doc_ids))
    }

    pub fn relative_path(&self) -> PathBuf {
        PathBuf::from(format!("{:016x}", self.model_hash)).join(self.file_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LookupOutcome {
    MemoryHit,
    DiskHit,
    Miss,
}

#[derive(Debug, Clone)]
pub struct LookupResult {
    pub outcome: LookupOutcome,
    pub blob: Option<Arc<KvBlob>>,
    /// Bytes read from disk (header + payload); zero unless `DiskHit`.
    pub load_cost_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Residency {
    InMemory,
    OnDisk,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PutOutcome {
    Written,
    AlreadyPresent,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub memory_hits: u64,
    pub disk_hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub corruptions: u64,
    pub memory_bytes_used: u64,
    pub memory_capacity_bytes: u64,
    pub disk_bytes_used: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("blob header does not match key {key:?}")]
    KeyMismatch { key: KvKey },
    #[error("key {key:?} already stored with checksum {existing:016x}; refusing {new:016x}")]
    Immutable { key: KvKey, existing: u64, new: u64 },
    #[error("corrupt blob at {path}: {source}")]
    Corrupt {
        path: PathBuf,
        #[source]
        source: CodecError,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl StoreError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    model_hash: String,
    doc_ids: Vec<u64>,
    file: String,
    bytes: u64,
}

struct MemoryTier {
    lru: ByteLru<KvKey>,
    blobs: HashMap<KvKey, Arc<KvBlob>>,
}

impl MemoryTier {
    fn insert(&mut self, key: KvKey, blob: Arc<KvBlob>, evictions: &AtomicU64) {
        let size = blob.encoded_len();
        let evicted = self.lru.insert(key.clone(), size);
        if self.lru.contains(&key) {
            self.blobs.insert(key, blob);
        }
        evictions.fetch_add(evicted.len() as u64, Ordering::Relaxed);
        for k in evicted {
            self.blobs.remove(&k);
        }
    }
}

pub struct KvStore {
    root: PathBuf,
    memory: Mutex<MemoryTier>,
    manifest: Mutex<()>,
    memory_hits: AtomicU64,
    disk_hits: AtomicU64,
    misses: AtomicU64,
    evictions: AtomicU64,
    corruptions: AtomicU64,
    disk_bytes: AtomicU64,
    tmp_counter: AtomicU64,
}

impl std::fmt::Debug for KvStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KvStore").field("root", &self.root).finish_non_exhaustive()
    }
}

impl KvStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl AsRef<Path>, memory_capacity_bytes: u64) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root).map_err(|e| StoreError::io(&root, e))?;
        let disk_bytes = disk_usage(&root)?;
        Ok(Self {
            root,
            memory: Mutex::new(MemoryTier {
                lru: ByteLru::new(memory_capacity_bytes),
                blobs: HashMap::new(),
            }),
            manifest: Mutex::new(()),
            memory_hits: AtomicU64::new(0),
            disk_hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            evictions: AtomicU64::new(0),
            corruptions: AtomicU64::new(0),
            disk_bytes: AtomicU64::new(disk_bytes),
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &KvKey) -> PathBuf {
        self.root.join(key.relative_path())
    }

    pub fn put(&self, key: &KvKey, blob: KvBlob) -> Result<PutOutcome, StoreError> {
        if blob.header.model_hash != key.model_hash || blob.header.doc_ids != key.doc_ids {
            return Err(StoreError::KeyMismatch { key: key.clone() });
        }
        let path = self.path_for(key);
        if let Some(existing) = self.existing_checksum(key, &path)? {
            if existing != blob.checksum() {
                return Err(StoreError::Immutable {
                    key: key.clone(),
                    existing,
                    new: blob.checksum(),
                });
            }
            return Ok(PutOutcome::AlreadyPresent);
        }

        let bytes = codec::encode(&blob);
        let dir = path.parent().expect("blob path has a parent");
        fs::create_dir_all(dir).map_err(|e| StoreError::io(dir, e))?;
        let tmp = dir.join(format!(
            ".{}.{}.{}.tmp",
            key.file_name(),
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&tmp, &bytes).map_err(|e| StoreError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| StoreError::io(&path, e))?;
        self.disk_bytes.fetch_add(bytes.len() as u64, Ordering::Relaxed);
        self.append_manifest(key, bytes.len() as u64)?;

        let blob = Arc::new(blob);
        self.memory
            .lock()
            .unwrap()
            .insert(key.clone(), blob, &self.evictions);
        Ok(PutOutcome::Written)
    }

    fn existing_checksum(&self, key: &KvKey, path: &Path) -> Result<Option<u64>, StoreError> {
        if let Some(blob) = self.memory.lock().unwrap().blobs.get(key) {
            return Ok(Some(blob.checksum()));
        }
        match fs::read(path) {
            Ok(bytes) => {
                let header = codec::decode_header(&bytes).map_err(|source| StoreError::Corrupt {
                    path: path.to_path_buf(),
                    source,
                })?;
                Ok(Some(header.checksum))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(StoreError::io(path, e)),
        }
    }

    fn append_manifest(&self, key: &KvKey, bytes: u64) -> Result<(), StoreError> {
        let line = serde_json::to_string(&ManifestLine {
            model_hash: format!("{:016x}", key.model_hash),
            doc_ids: key.doc_ids.clone(),
            file: key.relative_path().to_string_lossy().into_owned(),
            bytes,
        })
        .expect("manifest line serializes");
        let path = self.root.join("manifest.jsonl");
        let _guard = self.manifest.lock().unwrap();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| StoreError::io(&path, e))?;
        writeln!(f, "{line}").map_err(|e| StoreError::io(&path, e))
    }

    pub fn get(&self, key: &KvKey) -> Result<LookupResult, StoreError> {
        {
            let mut mem = self.memory.lock().unwrap();
            if mem.lru.touch(key) {
                let blob = mem.blobs.get(key).cloned();
                drop(mem);
                self.memory_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(LookupResult {
                    outcome: LookupOutcome::MemoryHit,
                    blob,
                    load_cost_bytes: 0,
                });
            }
        }

        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                return Ok(LookupResult {
                    outcome: LookupOutcome::Miss,
                    blob: None,
                    load_cost_bytes: 0,
                });
            }
            Err(e) => return Err(StoreError::io(&path, e)),
        };
        let blob = match codec::decode(&bytes) {
            Ok(b) if b.header.doc_ids == key.doc_ids && b.header.model_hash == key.model_hash => b,
            Ok(_) => {
                self.quarantine(&path, bytes.len() as u64);
                return Err(StoreError::Corrupt {
                    path,
                    source: CodecError::InvalidHeader("header does not match key".into()),
                });
            }
            Err(source) => {
                self.quarantine(&path, bytes.len() as u64);
                return Err(StoreError::Corrupt { path, source });
            }
        };
        let blob = Arc::new(blob);
        self.memory
            .lock()
            .unwrap()
            .insert(key.clone(), blob.clone(), &self.evictions);
        self.disk_hits.fetch_add(1, Ordering::Relaxed);
        Ok(LookupResult {
            outcome: LookupOutcome::DiskHit,
            blob: Some(blob),
            load_cost_bytes: bytes.len() as u64,
        })
    }

    // A corrupt read is counted as a miss so that hits + misses equals gets.
    fn quarantine(&self, path: &Path, size: u64) {
        self.misses.fetch_add(1, Ordering::Relaxed);
        self.corruptions.fetch_add(1, Ordering::Relaxed);
        let mut target = path.as_os_str().to_owned();
        target.push(".corrupt");
        if fs::rename(path, PathBuf::from(target)).is_ok() {
            self.disk_bytes.fetch_sub(size.min(self.disk_bytes.load(Ordering::Relaxed)), Ordering::Relaxed);
        }
    }

    pub fn contains(&self, key: &KvKey) -> Residency {
        if self.memory.lock().unwrap().lru.contains(key) {
            Residency::InMemory
        } else if self.path_for(key).is_file() {
            Residency::OnDisk
        } else {
            Residency::Absent
        }
    }

    pub fn set_memory_capacity(&self, bytes: u64) {
        let mut mem = self.memory.lock().unwrap();
        let evicted = mem.lru.set_capacity(bytes);
        self.evictions.fetch_add(evicted.len() as u64, Ordering::Relaxed);
        for k in evicted {
            mem.blobs.remove(&k);
        }
    }

    pub fn stats(&self) -> StoreStats {
        let mem = self.memory.lock().unwrap();
        StoreStats {
            memory_hits: self.memory_hits.load(Ordering::Relaxed),
            disk_hits: self.disk_hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            evictions: self.evictions.load(Ordering::Relaxed),
            corruptions: self.corruptions.load(Ordering::Relaxed),
            memory_bytes_used: mem.lru.used(),
            memory_capacity_bytes: mem.lru.capacity(),
            disk_bytes_used: self.disk_bytes.load(Ordering::Relaxed),
        }
    }

    /// Keys resident in memory, least recently used first.
    pub fn resident_keys(&self) -> Vec<KvKey> {
        self.memory.lock().unwrap().lru.keys_lru_order().cloned().collect()
    }

    /// Keys recorded in the manifest, in write order, without duplicates.
    pub fn list(&self) -> Result<Vec<KvKey>, StoreError> {
        let path = self.root.join("manifest.jsonl");
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(StoreError::io(&path, e)),
        };
        let mut seen = std::collections::HashSet::new();
        let mut keys = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            // A torn final line after a crash is skipped.
            let Ok(entry) = serde_json::from_str::<ManifestLine>(line) else {
                continue;
            };
            let Ok(model_hash) = u64::from_str_radix(&entry.model_hash, 16) else {
                continue;
            };
            let key = KvKey::new(model_hash, entry.doc_ids);
            if seen.insert(key.clone()) {
                keys.push(key);
            }
        }
        Ok(keys)
    }
}

fn disk_usage(root: &Path) -> Result<u64, StoreError> {
    let mut total = 0;
    let entries = fs::read_dir(root).map_err(|e| StoreError::io(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| StoreError::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            for f in fs::read_dir(&path).map_err(|e| StoreError::io(&path, e))? {
                let f = f.map_err(|e| StoreError::io(&path, e))?;
                if f.path().extension().is_some_and(|x| x == "rdkv") {
                    total += f.metadata().map_err(|e| StoreError::io(&f.path(), e))?.len();
                }
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{synth_blob, ModelProfile};

    fn profile() -> ModelProfile {
        ModelProfile::new("t", 1, 1, 4, 2).unwrap()
    }

    fn blob(ids: &[u64]) -> (KvKey, KvBlob) {
        let p = profile();
        let b = synth_blob(&p, ids, 4, 1).unwrap();
        (KvKey::new(p.model_hash(), ids.to_vec()), b)
    }

    #[test]
    fn put_then_get_memory_hit() {
        let dir = tempfile::tempdir().unwrap();
        let store = KvStore::open(dir.path(), 1 << 20).unwrap();
        let (k, b) = blob(&[1]);
        assert_eq!(store.put(&k, b.clone()).unwrap(), PutOutcome::Written);
        let r = store.get(&k).unwrap();
        assert_eq!(r.outcome, LookupOutcome::MemoryHit);
        assert_eq!(*r.blob.unwrap(), b);
        assert_eq!(r.load_cost_bytes, 0);
        assert_eq!(store.contains(&k), Residency::InMemory);
    }

    #[test]
    fn oversize_blob_is_disk_only() {
        let dir = tempfile::tempdir().unwrap();
        let (k, b) = blob(&[1]);
        let store = KvStore::open(dir.path(), b.encoded_len() - 1).unwrap();
        store.put(&k, b.clone()).unwrap();
        assert_eq!(store.contains(&k), Residency::OnDisk);
        let r = store.get(&k).unwrap();
        assert_eq!(r.outcome, LookupOutcome::DiskHit);
        assert_eq!(r.load_cost_bytes, b.encoded_len());
    }

    #[test]
    fn immutability_and_idempotence() {
        let dir = tempfile::tempdir().unwrap();
        let store = KvStore::open(dir.path(), 0).unwrap();
        let (k, b) = blob(&[3, 4]);
        store.put(&k, b.clone()).unwrap();
        assert_eq!(store.put(&k, b).unwrap(), PutOutcome::AlreadyPresent);
        let other = synth_blob(&profile(), &[3, 4], 4, 2).unwrap();
        assert!(matches!(store.put(&k, other), Err(StoreError::Immutable { .. })));
    }

    #[test]
    fn key_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = KvStore::open(dir.path(), 0).unwrap();
        let (_, b) = blob(&[1, 2]);
        let wrong = KvKey::new(profile().model_hash(), vec![2, 1]);
        assert!(matches!(store.put(&wrong, b), Err(StoreError::KeyMismatch { .. })));
    }

    #[test]
    fn capacity_zero_always_disk() {
        let dir = tempfile::tempdir().unwrap();
        let store = KvStore::open(dir.path(), 0).unwrap();
        let (k, b) = blob(&[9]);
        store.put(&k, b).unwrap();
        assert_eq!(store.get(&k).unwrap().outcome, LookupOutcome::DiskHit);
        assert_eq!(store.get(&k).unwrap().outcome, LookupOutcome::DiskHit);
    }

    #[test]
    fn lru_by_hand() {
        // Three entries on disk; memory holds two or three of them.
        for (cap_entries, expect) in [(2, LookupOutcome::DiskHit), (3, LookupOutcome::MemoryHit)] {
            let dir = tempfile::tempdir().unwrap();
            let keys: Vec<_> = [[1u64], [2], [3]].iter().map(|ids| blob(ids)).collect();
            let size = keys[0].1.encoded_len();
            let store = KvStore::open(dir.path(), 0).unwrap();
            for (k, b) in &keys {
                store.put(k, b.clone()).unwrap();
            }
            store.set_memory_capacity(cap_entries * size);
            for (k, _) in &keys {
                assert_eq!(store.get(k).unwrap().outcome, LookupOutcome::DiskHit);
            }
            assert_eq!(store.get(&keys[0].0).unwrap().outcome, expect);
        }
    }

    #[test]
    fn stats_and_shrink() {
        let dir = tempfile::tempdir().unwrap();
        let entries: Vec<_> = (0..4u64).map(|i| blob(&[i])).collect();
        let size = entries[0].1.encoded_len();
        let store = KvStore::open(dir.path(), 4 * size).unwrap();
        for (k, b) in &entries {
            store.put(k, b.clone()).unwrap();
        }
        store.get(&entries[0].0).unwrap();
        store.get(&entries[1].0).unwrap();
        store.get(&KvKey::new(1, vec![99])).unwrap();
        store.set_memory_capacity(size);
        let s = store.stats();
        assert_eq!((s.memory_hits, s.disk_hits, s.misses), (2, 0, 1));
        // resident 4 entries, capacity 1 entry: three evictions
        assert_eq!(s.evictions, 3);
        assert_eq!(s.memory_bytes_used, size);
        assert_eq!(store.resident_keys(), vec![entries[1].0.clone()]);
        store.get(&entries[2].0).unwrap();
        assert_eq!(store.stats().disk_hits, 1);
        assert_eq!(store.stats().disk_bytes_used, 4 * size);
    }

    #[test]
    fn corrupt_blob_is_quarantined() {
        let dir = tempfile::tempdir().unwrap();
        let store = KvStore::open(dir.path(), 0).unwrap();
        let (k, b) = blob(&[5]);
        store.put(&k, b).unwrap();
        let path = store.path_for(&k);
        let mut bytes = fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(store.get(&k), Err(StoreError::Corrupt { .. })));
        assert_eq!(store.stats().corruptions, 1);
        assert_eq!(store.contains(&k), Residency::Absent);
        assert_eq!(store.get(&k).unwrap().outcome, LookupOutcome::Miss);
    }

    #[test]
    fn manifest_lists_keys_and_reopen_sees_blobs() {
        let dir = tempfile::tempdir().unwrap();
        let (k1, b1) = blob(&[1]);
        let (k2, b2) = blob(&[2, 1]);
        {
            let store = KvStore::open(dir.path(), 0).unwrap();
            store.put(&k1, b1.clone()).unwrap();
            store.put(&k2, b2).unwrap();
            store.put(&k1, b1.clone()).unwrap();
        }
        let store = KvStore::open(dir.path(), 0).unwrap();
        assert_eq!(store.list().unwrap(), vec![k1.clone(), k2]);
        let on_disk = codec::decode(&fs::read(store.path_for(&k1)).unwrap()).unwrap();
        assert_eq!(on_disk, b1);
        assert!(store.stats().disk_bytes_used > 0);
    }
}
