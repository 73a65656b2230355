//! Content-addressed response cache.
//!
//! Keys are the SHA-256 of the canonical JSON of (model, messages, tools,
//! temperature). Entries live in memory under an LRU bound and, when a
//! directory is configured, also as `<dir>/<key>.json` files. Concurrent
//! requests for one key are serialized, so the inner backend sees each key
//! at most once; other keys proceed independently.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{BackendError, ChatBackend, ChatMessage, ChatRequest, ChatResponse, ToolSpec};
use crate::kernel::trace::{TraceKind, TraceScope};

pub const DEFAULT_CACHE_CAPACITY: usize = 10_000;

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    tools: &'a [ToolSpec],
    temperature: f64,
}

pub fn cache_key(request: &ChatRequest) -> String {
    let material = KeyMaterial {
        model: &request.model,
        messages: &request.messages,
        tools: &request.tools,
        temperature: request.temperature,
    };
    let json = serde_json::to_vec(&material).expect("request serializes");
    hex::encode(Sha256::digest(&json))
}

#[derive(Default)]
struct Lru {
    entries: HashMap<String, (ChatResponse, u64)>,
    order: BTreeMap<u64, String>,
    tick: u64,
}

impl Lru {
    fn touch(&mut self, key: &str) -> Option<ChatResponse> {
        self.tick += 1;
        let tick = self.tick;
        let (resp, last) = self.entries.get_mut(key)?;
        self.order.remove(last);
        *last = tick;
        self.order.insert(tick, key.to_string());
        Some(resp.clone())
    }

    /// Inserts and returns the keys evicted to stay within `capacity`.
    fn insert(&mut self, key: String, resp: ChatResponse, capacity: usize) -> Vec<String> {
        self.tick += 1;
        if let Some((_, old)) = self.entries.insert(key.clone(), (resp, self.tick)) {
            self.order.remove(&old);
        }
        self.order.insert(self.tick, key);
        let mut evicted = Vec::new();
        while self.entries.len() > capacity {
            let Some((_, victim)) = self.order.pop_first() else { break };
            self.entries.remove(&victim);
            evicted.push(victim);
        }
        evicted
    }
}

pub struct ResponseCache {
    capacity: usize,
    dir: Option<PathBuf>,
    lru: Mutex<Lru>,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl std::fmt::Debug for ResponseCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ResponseCache")
            .field("capacity", &self.capacity)
            .field("dir", &self.dir)
            .finish_non_exhaustive()
    }
}

impl ResponseCache {
    pub fn in_memory(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            dir: None,
            lru: Mutex::default(),
            key_locks: Mutex::default(),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn on_disk(dir: impl Into<PathBuf>, capacity: usize) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            ..Self::in_memory(capacity)
        })
    }

    pub fn len(&self) -> usize {
        self.lru.lock().unwrap_or_else(|p| p.into_inner()).entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }

    fn path_for(dir: &Path, key: &str) -> PathBuf {
        dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<ChatResponse> {
        if let Some(resp) = self.lru.lock().unwrap_or_else(|p| p.into_inner()).touch(key) {
            return Some(resp);
        }
        let dir = self.dir.as_ref()?;
        let bytes = std::fs::read(Self::path_for(dir, key)).ok()?;
        match serde_json::from_slice::<ChatResponse>(&bytes) {
            Ok(resp) => {
                self.insert_memory(key.to_string(), resp.clone());
                Some(resp)
            }
            Err(err) => {
                tracing::warn!(%err, key, "ignoring unreadable cache entry");
                None
            }
        }
    }

    pub fn put(&self, key: &str, resp: &ChatResponse) {
        if let Some(dir) = &self.dir {
            let path = Self::path_for(dir, key);
            let tmp = path.with_extension("json.tmp");
            let written = serde_json::to_vec(resp)
                .map_err(std::io::Error::other)
                .and_then(|bytes| std::fs::write(&tmp, bytes))
                .and_then(|_| std::fs::rename(&tmp, &path));
            if let Err(err) = written {
                tracing::warn!(%err, key, "cache write failed");
            }
        }
        self.insert_memory(key.to_string(), resp.clone());
    }

    fn insert_memory(&self, key: String, resp: ChatResponse) {
        let evicted = self
            .lru
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(key, resp, self.capacity);
        if let Some(dir) = &self.dir {
            for victim in evicted {
                let _ = std::fs::remove_file(Self::path_for(dir, &victim));
            }
        }
    }

    fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        let mut locks = self.key_locks.lock().unwrap_or_else(|p| p.into_inner());
        locks.entry(key.to_string()).or_default().clone()
    }

    fn release_key_lock(&self, key: &str, lock: Arc<Mutex<()>>) {
        let mut locks = self.key_locks.lock().unwrap_or_else(|p| p.into_inner());
        // one reference held by the map, one by us: nobody else is waiting
        if Arc::strong_count(&lock) == 2 {
            locks.remove(key);
        }
    }
}

/// Wraps a backend with a [`ResponseCache`].
pub struct CachedBackend<B> {
    inner: B,
    cache: Arc<ResponseCache>,
}

impl<B: ChatBackend> CachedBackend<B> {
    pub fn new(inner: B, cache: Arc<ResponseCache>) -> Self {
        Self { inner, cache }
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ChatBackend> ChatBackend for CachedBackend<B> {
    fn complete(&self, request: &ChatRequest, trace: &TraceScope) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let started = Instant::now();
        let key = cache_key(request);
        let lock = self.cache.key_lock(&key);
        let result = {
            let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
            match self.cache.get(&key) {
                Some(mut hit) => {
                    self.cache.hits.fetch_add(1, Ordering::SeqCst);
                    hit.tokens_in = 0;
                    hit.tokens_out = 0;
                    trace.record(
                        trace
                            .event(TraceKind::CacheHit, &request.model)
                            .duration(started.elapsed())
                            .payload(&key),
                    );
                    Ok(hit)
                }
                None => {
                    self.cache.misses.fetch_add(1, Ordering::SeqCst);
                    let result = self.inner.complete(request, trace);
                    if let Ok(resp) = &result {
                        self.cache.put(&key, resp);
                    }
                    result
                }
            }
        };
        self.cache.release_key_lock(&key, lock);
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockBackend, ScriptEntry};

    fn request(text: &str, temperature: f64) -> ChatRequest {
        ChatRequest {
            model: "mock".into(),
            messages: vec![ChatMessage::system("sys"), ChatMessage::user(text)],
            tools: vec![],
            temperature,
        }
    }

    fn cached() -> CachedBackend<MockBackend> {
        let mock = MockBackend::new(vec![
            ScriptEntry::substring("sony", "yes"),
            ScriptEntry {
                matcher: crate::backend::ScriptMatcher::Substring("down".into()),
                reply: crate::backend::ScriptReply::Error(BackendError::Unavailable("x".into())),
            },
        ]);
        CachedBackend::new(mock, Arc::new(ResponseCache::in_memory(DEFAULT_CACHE_CAPACITY)))
    }

    #[test]
    fn identical_requests_hit() {
        let b = cached();
        let trace = TraceScope::detached();
        let first = b.complete(&request("sony", 0.0), &trace).unwrap();
        let second = b.complete(&request("sony", 0.0), &trace).unwrap();
        assert_eq!(b.inner().stats().calls, 1);
        assert_eq!(first.message, second.message);
        assert!(first.tokens_in > 0);
        assert_eq!((second.tokens_in, second.tokens_out), (0, 0));
        let kinds: Vec<TraceKind> = trace.export().iter().map(|e| e.kind).collect();
        assert_eq!(kinds, [TraceKind::ModelCall, TraceKind::CacheHit]);
    }

    #[test]
    fn temperature_is_part_of_the_key() {
        let b = cached();
        let t = TraceScope::detached();
        b.complete(&request("sony", 0.0), &t).unwrap();
        b.complete(&request("sony", 0.5), &t).unwrap();
        assert_eq!(b.inner().stats().calls, 2);
    }

    #[test]
    fn near_misses_never_share_entries() {
        let base = request("sony a7", 0.0);
        let mut variants = vec![request("sony a7 ", 0.0), request("Sony a7", 0.0), request("sony a7", 1e-9)];
        let mut other_model = base.clone();
        other_model.model = "mock2".into();
        variants.push(other_model);
        let mut with_tool = base.clone();
        with_tool.tools.push(ToolSpec {
            name: "browse".into(),
            description: String::new(),
            parameters: serde_json::json!({}),
        });
        variants.push(with_tool);
        let mut system = base.clone();
        system.messages[0].content.push('.');
        variants.push(system);
        let key = cache_key(&base);
        for v in &variants {
            assert_ne!(cache_key(v), key, "{v:?}");
        }
    }

    #[test]
    fn errors_are_not_cached() {
        let b = cached();
        let t = TraceScope::detached();
        assert!(b.complete(&request("down", 0.0), &t).is_err());
        assert!(b.complete(&request("down", 0.0), &t).is_err());
        assert_eq!(b.inner().stats().calls, 2);
        assert!(b.cache().is_empty());
    }

    #[test]
    fn concurrent_identical_requests_call_inner_once() {
        let mock = MockBackend::new(vec![ScriptEntry::substring("sony", "yes")])
            .with_latency(std::time::Duration::from_millis(20));
        let b = Arc::new(CachedBackend::new(mock, Arc::new(ResponseCache::in_memory(16))));
        let handles: Vec<_> = (0..10)
            .map(|_| {
                let b = b.clone();
                std::thread::spawn(move || b.complete(&request("sony", 0.0), &TraceScope::detached()).unwrap())
            })
            .collect();
        for h in handles {
            assert_eq!(h.join().unwrap().message.content, "yes");
        }
        assert_eq!(b.inner().stats().calls, 1);
        assert_eq!((b.cache().misses(), b.cache().hits()), (1, 9));
    }

    #[test]
    fn lru_evicts_least_recently_used() {
        let cache = ResponseCache::in_memory(2);
        let r = |s: &str| ChatResponse::from_message(ChatMessage::assistant(s), 1, 1);
        cache.put("a", &r("a"));
        cache.put("b", &r("b"));
        assert!(cache.get("a").is_some());
        cache.put("c", &r("c"));
        assert!(cache.get("b").is_none());
        assert!(cache.get("a").is_some());
        assert!(cache.get("c").is_some());
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn disk_entries_survive_a_new_cache() {
        let dir = tempfile::tempdir().unwrap();
        let resp = ChatResponse::from_message(ChatMessage::assistant("yes"), 3, 1);
        ResponseCache::on_disk(dir.path(), 8).unwrap().put("k", &resp);
        let reopened = ResponseCache::on_disk(dir.path(), 8).unwrap();
        assert_eq!(reopened.get("k"), Some(resp));
    }

    #[test]
    fn disk_eviction_removes_files() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::on_disk(dir.path(), 1).unwrap();
        let r = ChatResponse::from_message(ChatMessage::assistant("x"), 1, 1);
        cache.put("a", &r);
        cache.put("b", &r);
        assert!(!dir.path().join("a.json").exists());
        assert!(dir.path().join("b.json").exists());
    }
}
