//! Deterministic stand-ins for every provider role.
//!
//! Mocks are pure functions of `(input, seed)`, so a whole pipeline run
//! under mocks is bit-reproducible. [`MockWorld`] scripts them from labelled
//! images so that discovery has a known right answer.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::cache::sha256_hex;
use super::{EmbedInput, Embedder, Llm, Providers, Vqa};
use crate::error::Result;
use crate::model::{normalize, Embedding, GENERAL_ATTRIBUTE};

/// Shared call counter for asserting how often a provider was hit.
#[derive(Debug, Clone, Default)]
pub struct CallCounter(Arc<AtomicUsize>);

impl CallCounter {
    pub fn get(&self) -> usize {
        self.0.load(Ordering::SeqCst)
    }

    fn bump(&self) {
        self.0.fetch_add(1, Ordering::SeqCst);
    }
}

/// Unit vector drawn from a generator seeded by `(seed, domain, bytes)`.
pub fn hash_embedding(seed: u64, domain: &str, bytes: &[u8], dim: usize) -> Embedding {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(domain.as_bytes());
    h.update([0u8]);
    h.update(bytes);
    let mut key = [0u8; 32];
    key.copy_from_slice(&h.finalize());
    let mut rng = ChaCha8Rng::from_seed(key);
    let values: Vec<f64> = (0..dim.max(1)).map(|_| rng.random_range(-1.0..1.0)).collect();
    let v = Embedding::new(values).expect("dim > 0");
    // a draw of all zeros has probability 0
    normalize(&v).unwrap_or(v)
}

pub const HISTOGRAM_BINS: usize = 4;
pub const HISTOGRAM_DIM: usize = HISTOGRAM_BINS * HISTOGRAM_BINS * HISTOGRAM_BINS;

/// Joint RGB histogram (4 bins per channel), unit-normalized. `None` when
/// the bytes are not a decodable raster.
pub fn color_histogram(bytes: &[u8]) -> Option<Embedding> {
    let img = image::load_from_memory(bytes).ok()?.to_rgb8();
    let mut hist = vec![0.0f64; HISTOGRAM_DIM];
    let width = 256 / HISTOGRAM_BINS;
    for p in img.pixels() {
        let [r, g, b] = p.0;
        let idx = (r as usize / width) * HISTOGRAM_BINS * HISTOGRAM_BINS
            + (g as usize / width) * HISTOGRAM_BINS
            + b as usize / width;
        hist[idx] += 1.0;
    }
    normalize(&Embedding::new(hist).ok()?).ok()
}

const GENERAL_PROMPT_MARK: &str = "Describe this image in details";
const DESCRIBE_PROMPT_MARK: &str = "Question: Describe the ";

#[derive(Debug, Clone)]
pub struct MockVqa {
    pub model: String,
    pub super_category: String,
    pub describe_answer: String,
    /// image sha256 → label revealed by the general description.
    pub labels: HashMap<String, String>,
    /// When set, every prompt gets this answer verbatim.
    pub fixed: Option<String>,
    counter: CallCounter,
}

impl Default for MockVqa {
    fn default() -> Self {
        Self {
            model: "mock-vqa".into(),
            super_category: "object".into(),
            describe_answer: "a distinctive one".into(),
            labels: HashMap::new(),
            fixed: None,
            counter: CallCounter::default(),
        }
    }
}

impl MockVqa {
    pub fn fixed(answer: impl Into<String>) -> Self {
        Self {
            fixed: Some(answer.into()),
            ..Self::default()
        }
    }

    pub fn counted(mut self, counter: CallCounter) -> Self {
        self.counter = counter;
        self
    }
}

impl Vqa for MockVqa {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn answer(&self, image: &[u8], prompt: &str) -> Result<String> {
        self.counter.bump();
        if let Some(fixed) = &self.fixed {
            return Ok(fixed.clone());
        }
        if prompt.contains(GENERAL_PROMPT_MARK) {
            return Ok(match self.labels.get(&sha256_hex(image)) {
                Some(label) => format!("a photo of a {label}."),
                None => format!("a photo of a {}.", self.super_category),
            });
        }
        if prompt.starts_with(DESCRIBE_PROMPT_MARK) {
            return Ok(self.describe_answer.clone());
        }
        Ok(self.super_category.clone())
    }
}

/// A scripted response: any prompt containing `needle` gets
/// `completions[sample_index % len]`.
#[derive(Debug, Clone)]
pub struct LlmRule {
    pub needle: String,
    pub completions: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct MockLlm {
    pub model: String,
    pub rules: Vec<LlmRule>,
    /// Decoy name patterns emitted after the true label; `{}` is the label.
    pub decoys: Vec<String>,
    counter: CallCounter,
}

pub const HOW_TO_NEEDLE: &str = "attributes for distinguishing";

impl Default for MockLlm {
    fn default() -> Self {
        Self {
            model: "mock-llm".into(),
            rules: vec![LlmRule {
                needle: HOW_TO_NEEDLE.into(),
                completions: vec![
                    "['shape', 'size', 'primary color']".into(),
                    "['primary color', 'texture', 'pattern']".into(),
                ],
            }],
            decoys: vec!["Greater {}".into(), "{} Hybrid".into()],
            counter: CallCounter::default(),
        }
    }
}

impl MockLlm {
    pub fn with_rule(mut self, needle: impl Into<String>, completions: Vec<String>) -> Self {
        self.rules.insert(
            0,
            LlmRule {
                needle: needle.into(),
                completions,
            },
        );
        self
    }

    pub fn counted(mut self, counter: CallCounter) -> Self {
        self.counter = counter;
        self
    }

    fn reason(&self, prompt: &str) -> Option<String> {
        let marker = format!("{GENERAL_ATTRIBUTE}: a photo of a ");
        let start = prompt.find(&marker)? + marker.len();
        let rest = &prompt[start..];
        let end = rest.find(['\n', '`'])?;
        let label = rest[..end].trim().trim_end_matches('.').trim();
        if label.is_empty() {
            return None;
        }
        let mut names = vec![label.to_string()];
        names.extend(self.decoys.iter().map(|d| d.replace("{}", label)));
        let out = serde_json::json!({
            "summary": [format!("The image shows a {label}.")],
            "names": names,
        });
        Some(out.to_string())
    }
}

impl Llm for MockLlm {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str, _temperature: f64, n: usize) -> Result<Vec<String>> {
        self.counter.bump();
        let out = (0..n)
            .map(|i| {
                if let Some(rule) = self.rules.iter().find(|r| prompt.contains(&r.needle)) {
                    return rule.completions[i % rule.completions.len()].clone();
                }
                self.reason(prompt)
                    .unwrap_or_else(|| "mock completion".to_string())
            })
            .collect();
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageMode {
    /// Seeded hash of the raw bytes.
    Hash,
    /// Color histogram of the decoded raster, hash fallback for non-images.
    ColorHistogram,
}

#[derive(Debug, Clone)]
pub struct MockEmbedder {
    pub model: String,
    pub seed: u64,
    pub dim: usize,
    pub image_mode: ImageMode,
    /// Exact-text overrides for text embeddings.
    pub text_overrides: HashMap<String, Embedding>,
    counter: CallCounter,
}

impl MockEmbedder {
    pub fn hashed(seed: u64, dim: usize) -> Self {
        Self {
            model: "mock-embed".into(),
            seed,
            dim,
            image_mode: ImageMode::Hash,
            text_overrides: HashMap::new(),
            counter: CallCounter::default(),
        }
    }

    pub fn histogram(seed: u64) -> Self {
        Self {
            image_mode: ImageMode::ColorHistogram,
            ..Self::hashed(seed, HISTOGRAM_DIM)
        }
    }

    pub fn with_text(mut self, text: impl Into<String>, v: Embedding) -> Self {
        self.text_overrides.insert(text.into(), v);
        self
    }

    pub fn counted(mut self, counter: CallCounter) -> Self {
        self.counter = counter;
        self
    }
}

impl Embedder for MockEmbedder {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn embed(&self, input: EmbedInput<'_>) -> Result<Embedding> {
        self.counter.bump();
        Ok(match input {
            EmbedInput::Image(bytes) => match self.image_mode {
                ImageMode::ColorHistogram => color_histogram(bytes)
                    .unwrap_or_else(|| hash_embedding(self.seed, "image", bytes, self.dim)),
                ImageMode::Hash => hash_embedding(self.seed, "image", bytes, self.dim),
            },
            EmbedInput::Text(t) => match self.text_overrides.get(t) {
                Some(v) => v.clone(),
                None => hash_embedding(self.seed, "text", t.as_bytes(), self.dim),
            },
            EmbedInput::Sentence(t) => hash_embedding(self.seed, "sentence", t.as_bytes(), self.dim),
        })
    }
}

/// Labelled images from which a consistent set of mocks is scripted.
///
/// The VQA mock reveals each image's label in its general description, the
/// LLM mock echoes that label (plus decoys) as candidate names, and the text
/// embedding of each label is the mean color histogram of its images.
#[derive(Debug, Clone)]
pub struct MockWorld {
    pub super_category: String,
    pub seed: u64,
    images: Vec<(Vec<u8>, String)>,
}

impl MockWorld {
    pub fn new(super_category: impl Into<String>, seed: u64) -> Self {
        Self {
            super_category: super_category.into(),
            seed,
            images: Vec::new(),
        }
    }

    pub fn add_image(&mut self, bytes: Vec<u8>, label: impl Into<String>) {
        self.images.push((bytes, label.into()));
    }

    pub fn label_prototypes(&self) -> Result<Vec<(String, Embedding)>> {
        let mut sums: Vec<(String, Embedding)> = Vec::new();
        for (bytes, label) in &self.images {
            let Some(h) = color_histogram(bytes) else { continue };
            match sums.iter_mut().find(|(l, _)| l == label) {
                Some((_, acc)) => acc.add_assign(&h)?,
                None => sums.push((label.clone(), h)),
            }
        }
        sums.into_iter()
            .map(|(l, v)| Ok((l, normalize(&v)?)))
            .collect()
    }

    pub fn providers(&self, concurrency: usize) -> Result<Providers> {
        let vqa = MockVqa {
            super_category: self.super_category.clone(),
            labels: self
                .images
                .iter()
                .map(|(b, l)| (sha256_hex(b), l.clone()))
                .collect(),
            ..MockVqa::default()
        };
        let mut embedder = MockEmbedder::histogram(self.seed);
        for (label, proto) in self.label_prototypes()? {
            embedder = embedder.with_text(label, proto);
        }
        let embedder = Arc::new(embedder);
        Ok(Providers {
            vqa: Arc::new(vqa),
            llm: Arc::new(MockLlm::default()),
            image_embed: embedder.clone(),
            text_embed: embedder.clone(),
            sentence_embed: embedder,
            concurrency,
        })
    }
}

/// Generic mocks with no scripted world: hash embeddings of dim `dim`.
pub fn hashed_providers(seed: u64, dim: usize) -> Providers {
    let embedder = Arc::new(MockEmbedder::hashed(seed, dim));
    Providers {
        vqa: Arc::new(MockVqa::default()),
        llm: Arc::new(MockLlm::default()),
        image_embed: embedder.clone(),
        text_embed: embedder.clone(),
        sentence_embed: embedder,
        concurrency: 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::cosine;

    #[test]
    fn text_embedding_is_deterministic() {
        let e = MockEmbedder::hashed(1, 32);
        let a = e.embed(EmbedInput::Text("Dark-eyed Junco")).unwrap();
        let b = e.embed(EmbedInput::Text("Dark-eyed Junco")).unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sentence_self_similarity_is_one() {
        let e = MockEmbedder::hashed(1, 32);
        let a = e.embed(EmbedInput::Sentence("lotus")).unwrap();
        let b = e.embed(EmbedInput::Sentence("lotus")).unwrap();
        assert!((cosine(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distinct_inputs_never_collide() {
        let e = MockEmbedder::hashed(3, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut seen: Vec<(String, Embedding)> = Vec::new();
        for i in 0..1000 {
            let len = rng.random_range(1..12);
            let s: String = (0..len)
                .map(|_| rng.random_range(b'a'..=b'z') as char)
                .chain(i.to_string().chars())
                .collect();
            let t = e.embed(EmbedInput::Text(&s)).unwrap();
            let im = e.embed(EmbedInput::Image(s.as_bytes())).unwrap();
            assert!(cosine(&t, &im).unwrap() < 1.0 - 1e-9);
            seen.push((s, t));
        }
        for (i, (a, va)) in seen.iter().enumerate() {
            for (b, vb) in &seen[i + 1..] {
                assert!(cosine(va, vb).unwrap() < 1.0 - 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn vqa_modes() {
        let v = MockVqa::default();
        assert_eq!(v.answer(b"x", "Question: What is it? Answer:").unwrap(), "object");
        assert_eq!(
            v.answer(b"x", "Question: Describe the ear shape of the dog in this image. Answer:")
                .unwrap(),
            "a distinctive one"
        );
        assert_eq!(MockVqa::fixed("  Bird \n").answer(b"x", "q").unwrap(), "  Bird \n");
    }

    #[test]
    fn llm_fallback_is_fixed() {
        let l = MockLlm::default();
        assert_eq!(l.complete("anything", 0.0, 1).unwrap(), vec!["mock completion"]);
    }
}
