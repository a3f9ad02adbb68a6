//! Content-addressed response cache.
//!
//! Entries live in an append-only directory, one JSON file per request
//! digest. A warm cache makes every stage replayable without touching a
//! provider, which is the only way to reproduce runs against sampling LLMs.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{EmbedInput, Embedder, Llm, Providers, Role, Vqa};
use crate::error::{Error, Result};
use crate::model::Embedding;

pub const CACHE_DIR_ENV: &str = "FINER_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub role: Role,
    pub model_name: String,
    pub created_at: u64,
    pub value: Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Recursively sorts object keys so logically equal bodies serialize alike.
pub fn canonicalize(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            let mut out = serde_json::Map::new();
            for (k, v) in entries {
                out.insert(k.clone(), canonicalize(v));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(canonicalize).collect()),
        other => other.clone(),
    }
}

/// Digest over `(role, model, canonical body)`. Image bytes should already
/// be replaced by their hash in `body` (see [`vqa_body`], [`embed_body`]).
pub fn cache_key(role: Role, model_name: &str, body: &Value) -> String {
    let canonical = canonicalize(body).to_string();
    let mut h = Sha256::new();
    h.update(role.as_str().as_bytes());
    h.update([0u8]);
    h.update(model_name.as_bytes());
    h.update([0u8]);
    h.update(canonical.as_bytes());
    hex::encode(h.finalize())
}

pub fn vqa_body(image: &[u8], prompt: &str) -> Value {
    json!({ "image_sha256": sha256_hex(image), "prompt": prompt })
}

pub fn embed_body(input: EmbedInput<'_>) -> Value {
    match input {
        EmbedInput::Image(b) => json!({ "kind": "image", "payload_sha256": sha256_hex(b) }),
        EmbedInput::Text(t) => json!({ "kind": "text", "payload": t }),
        EmbedInput::Sentence(t) => json!({ "kind": "sentence", "payload": t }),
    }
}

pub fn chat_body(prompt: &str, temperature: f64, sample_index: usize) -> Value {
    json!({ "prompt": prompt, "temperature": temperature, "sample_index": sample_index })
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    /// Skip reads (still writes). Backs `--force`.
    refresh: bool,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            refresh: false,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn refreshing(mut self, refresh: bool) -> Self {
        self.refresh = refresh;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        if self.refresh {
            self.misses.fetch_add(1, Ordering::Relaxed);
            return None;
        }
        let entry = std::fs::read(self.path_for(key))
            .ok()
            .and_then(|bytes| serde_json::from_slice::<CacheEntry>(&bytes).ok())
            .filter(|e| e.key == key);
        match entry {
            Some(e) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                Some(e)
            }
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                None
            }
        }
    }

    pub fn put(&self, key: &str, role: Role, model_name: &str, value: Value) -> Result<()> {
        let created_at = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let entry = CacheEntry {
            key: key.to_string(),
            role,
            model_name: model_name.to_string(),
            created_at,
            value,
        };
        let path = self.path_for(key);
        // write-then-rename keeps concurrent writers of one key from tearing the file
        let tmp = self.dir.join(format!(
            ".{key}.{}.{:?}.tmp",
            std::process::id(),
            std::thread::current().id()
        ));
        std::fs::write(&tmp, serde_json::to_vec(&entry)?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

pub struct CachedVqa {
    inner: Arc<dyn Vqa>,
    cache: Arc<ResponseCache>,
}

impl Vqa for CachedVqa {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn answer(&self, image: &[u8], prompt: &str) -> Result<String> {
        let key = cache_key(Role::Vqa, self.model_name(), &vqa_body(image, prompt));
        if let Some(Value::String(s)) = self.cache.get(&key).map(|e| e.value) {
            return Ok(s);
        }
        let answer = self.inner.answer(image, prompt)?;
        // empty answers are not cached so a retry can recover
        if !answer.trim().is_empty() {
            self.cache
                .put(&key, Role::Vqa, self.model_name(), Value::String(answer.clone()))?;
        }
        Ok(answer)
    }
}

pub struct CachedLlm {
    inner: Arc<dyn Llm>,
    cache: Arc<ResponseCache>,
}

impl Llm for CachedLlm {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    /// Each sample is cached under its own index. On any miss the inner
    /// model is asked for all `n`, and only the missing slots are filled.
    fn complete(&self, prompt: &str, temperature: f64, n: usize) -> Result<Vec<String>> {
        let keys: Vec<String> = (0..n)
            .map(|i| cache_key(Role::Llm, self.model_name(), &chat_body(prompt, temperature, i)))
            .collect();
        let mut slots: Vec<Option<String>> = keys
            .iter()
            .map(|k| match self.cache.get(k).map(|e| e.value) {
                Some(Value::String(s)) => Some(s),
                _ => None,
            })
            .collect();
        if slots.iter().all(Option::is_some) {
            return Ok(slots.into_iter().flatten().collect());
        }
        let fresh = self.inner.complete(prompt, temperature, n)?;
        if fresh.len() != n {
            return Err(Error::Provider(format!(
                "asked for {n} completions, got {}",
                fresh.len()
            )));
        }
        for ((slot, key), text) in slots.iter_mut().zip(&keys).zip(fresh) {
            if slot.is_none() {
                self.cache
                    .put(key, Role::Llm, self.model_name(), Value::String(text.clone()))?;
                *slot = Some(text);
            }
        }
        Ok(slots.into_iter().flatten().collect())
    }
}

pub struct CachedEmbedder {
    inner: Arc<dyn Embedder>,
    cache: Arc<ResponseCache>,
    /// First dim observed; 0 until then.
    dim: AtomicUsize,
}

impl CachedEmbedder {
    fn check_dim(&self, got: usize) -> Result<()> {
        match self
            .dim
            .compare_exchange(0, got, Ordering::SeqCst, Ordering::SeqCst)
        {
            Ok(_) => Ok(()),
            Err(expected) if expected == got => Ok(()),
            Err(expected) => Err(Error::DimDrift { expected, got }),
        }
    }
}

impl Embedder for CachedEmbedder {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn embed(&self, input: EmbedInput<'_>) -> Result<Embedding> {
        let role = input.kind().role();
        let key = cache_key(role, self.model_name(), &embed_body(input));
        let cached = self
            .cache
            .get(&key)
            .and_then(|e| e.value.as_str().map(Embedding::from_base64));
        let v = match cached {
            Some(v) => v?,
            None => {
                let v = self.inner.embed(input)?;
                // round-trip through f32 so cold and warm runs see identical values
                let encoded = v.to_base64();
                self.cache
                    .put(&key, role, self.model_name(), Value::String(encoded.clone()))?;
                Embedding::from_base64(&encoded)?
            }
        };
        self.check_dim(v.dim())?;
        Ok(v)
    }
}

impl Providers {
    /// Puts every role behind `cache`.
    pub fn cached(self, cache: Arc<ResponseCache>) -> Providers {
        let emb = |inner: Arc<dyn Embedder>| -> Arc<dyn Embedder> {
            Arc::new(CachedEmbedder {
                inner,
                cache: cache.clone(),
                dim: AtomicUsize::new(0),
            })
        };
        Providers {
            vqa: Arc::new(CachedVqa {
                inner: self.vqa,
                cache: cache.clone(),
            }),
            llm: Arc::new(CachedLlm {
                inner: self.llm,
                cache: cache.clone(),
            }),
            image_embed: emb(self.image_embed),
            text_embed: emb(self.text_embed),
            sentence_embed: emb(self.sentence_embed),
            concurrency: self.concurrency,
        }
    }
}
