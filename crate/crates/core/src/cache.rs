//! Persistent pool of processed datasets keyed by strategy prefix.
//!
//! A strategy that extends a cached one only needs its suffix applied to the
//! cached result. Every intermediate prefix produced while applying a strategy
//! is stored, so later strategies sharing any prefix benefit.
//!
//! Layout under the cache root:
//!
//! ```text
//! index.jsonl            append-only put/evict records
//! entries/<id>/data.jsonl
//! entries/<id>/meta.json
//! .lock                  held by the writing process
//! ```

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::corpus::{load_dataset, save_dataset, CorpusError, Dataset, Digest};
use crate::operators::{apply_team, OperatorContext};
use crate::strategy::{Strategy, StrategyKey};

pub const CACHE_DIR_ENV: &str = "DPFORGE_CACHE_DIR";
const INDEX_FILE: &str = "index.jsonl";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("cache entry {id} for {strategy}: stored fingerprint {expected}, got {actual}")]
    Integrity {
        id: String,
        strategy: String,
        expected: String,
        actual: String,
    },
    #[error("cache at {0} is locked by another process (remove the .lock file if stale)")]
    Locked(PathBuf),
    #[error("index line {line}: {message}")]
    Index { line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CacheError + '_ {
    move |source| CacheError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub id: String,
    pub key: StrategyKey,
    pub strategy: Strategy,
    pub base_fingerprint: Digest,
    pub result_fingerprint: Digest,
    /// Relative to the cache root.
    pub storage_path: PathBuf,
    pub created_at: u64,
    pub producer_round: u32,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum IndexRecord {
    Put(CacheEntry),
    Evict { id: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub entries: usize,
    pub hits: usize,
    pub team_invocations: usize,
    pub team_invocations_saved: usize,
}

/// Result of applying a strategy through the cache.
#[derive(Debug, Clone)]
pub struct ReuseOutcome {
    pub dataset: Dataset,
    /// Length of the cached prefix that was reused (0 on a miss).
    pub reused: usize,
    /// Teams actually executed.
    pub executed: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub id: String,
    pub strategy: String,
    pub detail: String,
}

struct Inner {
    entries: BTreeMap<String, CacheEntry>,
    order: Vec<String>,
    stats: CacheStats,
    torn_tail: bool,
}

struct LockGuard(PathBuf);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

pub struct StrategyCache {
    root: PathBuf,
    inner: Mutex<Inner>,
    _lock: Option<LockGuard>,
}

impl std::fmt::Debug for StrategyCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StrategyCache").field("root", &self.root).finish()
    }
}

pub fn entry_id(key: &StrategyKey, base: &Digest) -> String {
    let mut h = Sha256::new();
    h.update(key.canonical().as_bytes());
    h.update(b"|");
    h.update(base.to_hex().as_bytes());
    hex::encode(h.finalize())
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl StrategyCache {
    /// Opens (creating if needed) a writable cache and takes the root lock.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, CacheError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("entries")).map_err(io_err(&root))?;
        let lock_path = root.join(LOCK_FILE);
        let mut f = match OpenOptions::new().write(true).create_new(true).open(&lock_path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => return Err(CacheError::Locked(root)),
            Err(e) => return Err(CacheError::Io { path: lock_path, source: e }),
        };
        let _ = writeln!(f, "{}", std::process::id());
        let guard = LockGuard(lock_path);
        let inner = Self::load_index(&root)?;
        let cache = StrategyCache { root, inner: Mutex::new(inner), _lock: Some(guard) };
        {
            let mut inner = cache.inner.lock().unwrap();
            if inner.torn_tail {
                cache.compact_locked(&inner)?;
                inner.torn_tail = false;
            }
        }
        Ok(cache)
    }

    /// Opens without the lock, for inspection and verification.
    pub fn open_read_only(root: impl AsRef<Path>) -> Result<Self, CacheError> {
        let root = root.as_ref().to_path_buf();
        let inner = Self::load_index(&root)?;
        Ok(StrategyCache { root, inner: Mutex::new(inner), _lock: None })
    }

    fn load_index(root: &Path) -> Result<Inner, CacheError> {
        let mut entries = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        let mut torn_tail = false;
        let path = root.join(INDEX_FILE);
        if path.exists() {
            let file = fs::File::open(&path).map_err(io_err(&path))?;
            let lines: Vec<String> = BufReader::new(file)
                .lines()
                .collect::<Result<_, _>>()
                .map_err(io_err(&path))?;
            let last = lines.len();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<IndexRecord>(line) {
                    Ok(IndexRecord::Put(e)) => {
                        if entries.insert(e.id.clone(), e.clone()).is_none() {
                            order.push(e.id);
                        }
                    }
                    Ok(IndexRecord::Evict { id }) => {
                        entries.remove(&id);
                        order.retain(|x| x != &id);
                    }
                    // A torn final line from a crash mid-append is ignored.
                    Err(_) if i + 1 == last => {
                        log::warn!("ignoring truncated last index line in {}", path.display());
                        torn_tail = true;
                    }
                    Err(e) => return Err(CacheError::Index { line: i + 1, message: e.to_string() }),
                }
            }
        }
        let stats = CacheStats { entries: entries.len(), ..CacheStats::default() };
        Ok(Inner { entries, order, stats, torn_tail })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn append_index(&self, rec: &IndexRecord) -> Result<(), CacheError> {
        let path = self.root.join(INDEX_FILE);
        let mut line = serde_json::to_string(rec).expect("index record serializes");
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        f.write_all(line.as_bytes()).map_err(io_err(&path))?;
        f.sync_data().map_err(io_err(&path))
    }

    pub fn entries(&self) -> Vec<CacheEntry> {
        let inner = self.inner.lock().unwrap();
        inner.order.iter().filter_map(|id| inner.entries.get(id).cloned()).collect()
    }

    pub fn stats(&self) -> CacheStats {
        let inner = self.inner.lock().unwrap();
        CacheStats { entries: inner.entries.len(), ..inner.stats }
    }

    /// Stores `result` as the output of `key` on the dataset with fingerprint `base`.
    /// Re-putting an identical result is a no-op; a different result is an
    /// integrity error.
    pub fn put(
        &self,
        key: &StrategyKey,
        strategy: &Strategy,
        base: Digest,
        result: &Dataset,
        producer_round: u32,
    ) -> Result<CacheEntry, CacheError> {
        let id = entry_id(key, &base);
        let mut inner = self.inner.lock().unwrap();
        if let Some(existing) = inner.entries.get(&id) {
            if existing.result_fingerprint == result.fingerprint() {
                return Ok(existing.clone());
            }
            return Err(CacheError::Integrity {
                id,
                strategy: strategy.to_string(),
                expected: existing.result_fingerprint.to_hex(),
                actual: result.fingerprint().to_hex(),
            });
        }
        let rel = PathBuf::from("entries").join(&id);
        let final_dir = self.root.join(&rel);
        let tmp_dir = self.root.join("entries").join(format!("{id}.tmp-{}", std::process::id()));
        if tmp_dir.exists() {
            fs::remove_dir_all(&tmp_dir).map_err(io_err(&tmp_dir))?;
        }
        fs::create_dir_all(&tmp_dir).map_err(io_err(&tmp_dir))?;
        save_dataset(result, tmp_dir.join("data.jsonl"))?;
        let entry = CacheEntry {
            id: id.clone(),
            key: key.clone(),
            strategy: strategy.clone(),
            base_fingerprint: base,
            result_fingerprint: result.fingerprint(),
            storage_path: rel,
            created_at: now_secs(),
            producer_round,
            samples: result.len(),
        };
        let meta = serde_json::to_string_pretty(&entry).expect("entry serializes");
        fs::write(tmp_dir.join("meta.json"), meta).map_err(io_err(&tmp_dir))?;
        if final_dir.exists() {
            fs::remove_dir_all(&final_dir).map_err(io_err(&final_dir))?;
        }
        fs::rename(&tmp_dir, &final_dir).map_err(io_err(&final_dir))?;
        self.append_index(&IndexRecord::Put(entry.clone()))?;
        inner.order.push(id.clone());
        inner.entries.insert(id, entry.clone());
        Ok(entry)
    }

    /// Loads an entry's dataset and checks it against the stored fingerprint.
    pub fn load(&self, entry: &CacheEntry) -> Result<Dataset, CacheError> {
        let d = load_dataset(self.root.join(&entry.storage_path).join("data.jsonl"))?;
        if d.fingerprint() != entry.result_fingerprint {
            return Err(CacheError::Integrity {
                id: entry.id.clone(),
                strategy: entry.strategy.to_string(),
                expected: entry.result_fingerprint.to_hex(),
                actual: d.fingerprint().to_hex(),
            });
        }
        Ok(d)
    }

    /// Longest cached prefix of `f` for this base, config digest and seed,
    /// with the remaining suffix. Looks up each prefix's entry id, longest first.
    pub fn find_longest_prefix(
        &self,
        f: &Strategy,
        base: Digest,
        config_digest: &str,
        seed: u64,
    ) -> Option<(CacheEntry, Strategy)> {
        let inner = self.inner.lock().unwrap();
        (1..=f.len()).rev().find_map(|k| {
            let (prefix, suffix) = f.split_at(k).expect("k in range");
            let id = entry_id(&StrategyKey::new(&prefix, config_digest, seed), &base);
            inner.entries.get(&id).map(|e| (e.clone(), suffix))
        })
    }

    pub fn evict(&self, id: &str) -> Result<(), CacheError> {
        let mut inner = self.inner.lock().unwrap();
        self.evict_locked(&mut inner, id)
    }

    fn evict_locked(&self, inner: &mut Inner, id: &str) -> Result<(), CacheError> {
        if let Some(e) = inner.entries.remove(id) {
            inner.order.retain(|x| x != id);
            let dir = self.root.join(&e.storage_path);
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
            }
            self.append_index(&IndexRecord::Evict { id: id.to_string() })?;
        }
        Ok(())
    }

    /// Applies `f` to `base`, starting from the longest cached prefix and
    /// caching every newly produced prefix.
    pub fn apply_with_reuse(
        &self,
        f: &Strategy,
        base: &Dataset,
        ctx: &OperatorContext,
        producer_round: u32,
    ) -> Result<ReuseOutcome, CacheError> {
        if f.is_empty() {
            return Ok(ReuseOutcome { dataset: base.clone(), reused: 0, executed: 0 });
        }
        let digest = ctx.digest();
        let base_fp = base.fingerprint();
        let mut start = base.clone();
        let mut done = 0;
        if let Some((entry, _suffix)) = self.find_longest_prefix(f, base_fp, &digest, ctx.seed) {
            match self.load(&entry) {
                Ok(d) => {
                    start = d;
                    done = entry.strategy.len();
                    let mut inner = self.inner.lock().unwrap();
                    inner.stats.hits += 1;
                    inner.stats.team_invocations_saved += done;
                }
                Err(e) => {
                    log::warn!("evicting cache entry {} ({}): {e}; reprocessing from scratch", entry.id, entry.strategy);
                    self.evict(&entry.id)?;
                }
            }
        }
        let mut cur = start;
        for k in done..f.len() {
            cur = apply_team(f.teams()[k], &cur, ctx);
            self.inner.lock().unwrap().stats.team_invocations += 1;
            let prefix = Strategy::from_vec_unchecked(f.teams()[..=k].to_vec());
            let key = StrategyKey::new(&prefix, &digest, ctx.seed);
            self.put(&key, &prefix, base_fp, &cur, producer_round)?;
        }
        Ok(ReuseOutcome { dataset: cur, reused: done, executed: f.len() - done })
    }

    /// Recomputes every stored dataset's fingerprint.
    pub fn verify(&self) -> Vec<Mismatch> {
        self.entries()
            .into_iter()
            .filter_map(|e| match self.load(&e) {
                Ok(_) => None,
                Err(err) => Some(Mismatch { id: e.id.clone(), strategy: e.strategy.to_string(), detail: err.to_string() }),
            })
            .collect()
    }

    /// Drops entries older than `max_age`, then the oldest beyond `max_entries`.
    /// Returns the number removed and compacts the index.
    pub fn prune(&self, max_entries: Option<usize>, max_age: Option<Duration>) -> Result<usize, CacheError> {
        let mut inner = self.inner.lock().unwrap();
        let now = now_secs();
        let mut doomed: Vec<String> = Vec::new();
        if let Some(age) = max_age {
            doomed.extend(
                inner
                    .order
                    .iter()
                    .filter(|id| now.saturating_sub(inner.entries[*id].created_at) > age.as_secs())
                    .cloned(),
            );
        }
        if let Some(max) = max_entries {
            let remaining: Vec<String> = inner.order.iter().filter(|id| !doomed.contains(id)).cloned().collect();
            if remaining.len() > max {
                doomed.extend(remaining[..remaining.len() - max].iter().cloned());
            }
        }
        for id in &doomed {
            self.evict_locked(&mut inner, id)?;
        }
        self.compact_locked(&inner)?;
        Ok(doomed.len())
    }

    fn compact_locked(&self, inner: &Inner) -> Result<(), CacheError> {
        let path = self.root.join(INDEX_FILE);
        let tmp = self.root.join("index.jsonl.tmp");
        let mut buf = String::new();
        for id in &inner.order {
            buf.push_str(&serde_json::to_string(&IndexRecord::Put(inner.entries[id].clone())).unwrap());
            buf.push('\n');
        }
        fs::write(&tmp, buf).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    /// Total bytes stored under `entries/`.
    pub fn disk_bytes(&self) -> u64 {
        self.entries()
            .iter()
            .map(|e| {
                fs::read_dir(self.root.join(&e.storage_path))
                    .map(|rd| rd.filter_map(|f| f.ok()?.metadata().ok()).map(|m| m.len()).sum::<u64>())
                    .unwrap_or(0)
            })
            .sum()
    }
}
