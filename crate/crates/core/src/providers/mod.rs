//! Model-provider roles and their clients.
//!
//! Every stage talks to models through three small traits. Concrete
//! implementations are the JSON-over-HTTP client ([`http`]), deterministic
//! mocks ([`mock`]), and the content-addressed cache ([`cache`]) that wraps
//! either one.
//!
//! Wire contract:
//!
//! | endpoint        | request                                   | response                      |
//! |-----------------|-------------------------------------------|-------------------------------|
//! | `POST /v1/vqa`  | `{image_b64, prompt}`                     | `{answer}`                    |
//! | `POST /v1/embed`| `{kind: "image"\|"text"\|"sentence", payload}` | `{vector: [f32], dim}`   |
//! | `POST /v1/chat` | `{prompt, temperature, n}`                | `{choices: [text]}`           |
//!
//! For `kind = "image"` the payload is base64-encoded raster bytes.

pub mod cache;
#[cfg(feature = "http")]
pub mod http;
pub mod mock;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Embedding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Vqa,
    Llm,
    ImageEmbed,
    TextEmbed,
    SentenceEmbed,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Vqa => "vqa",
            Role::Llm => "llm",
            Role::ImageEmbed => "image_embed",
            Role::TextEmbed => "text_embed",
            Role::SentenceEmbed => "sentence_embed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedKind {
    Image,
    Text,
    Sentence,
}

impl EmbedKind {
    pub fn role(self) -> Role {
        match self {
            EmbedKind::Image => Role::ImageEmbed,
            EmbedKind::Text => Role::TextEmbed,
            EmbedKind::Sentence => Role::SentenceEmbed,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum EmbedInput<'a> {
    Image(&'a [u8]),
    Text(&'a str),
    Sentence(&'a str),
}

impl EmbedInput<'_> {
    pub fn kind(&self) -> EmbedKind {
        match self {
            EmbedInput::Image(_) => EmbedKind::Image,
            EmbedInput::Text(_) => EmbedKind::Text,
            EmbedInput::Sentence(_) => EmbedKind::Sentence,
        }
    }

    fn is_empty(&self) -> bool {
        match self {
            EmbedInput::Image(b) => b.is_empty(),
            EmbedInput::Text(s) | EmbedInput::Sentence(s) => s.is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderEndpoint {
    pub role: Role,
    pub base_url: String,
    pub model_name: String,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    pub max_concurrency: usize,
}

impl ProviderEndpoint {
    pub fn new(role: Role, base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            role,
            base_url: base_url.into(),
            model_name: model_name.into(),
            timeout: Duration::from_secs(120),
            max_concurrency: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_concurrency == 0 {
            return Err(Error::Config(format!(
                "{}: max_concurrency must be >= 1",
                self.role.as_str()
            )));
        }
        if self.timeout.is_zero() {
            return Err(Error::Config(format!(
                "{}: timeout must be > 0",
                self.role.as_str()
            )));
        }
        Ok(())
    }
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// Visual question answering: one image, one prompt, one short answer.
pub trait Vqa: Send + Sync {
    fn model_name(&self) -> &str;
    fn answer(&self, image: &[u8], prompt: &str) -> Result<String>;
}

/// Chat-style completion returning `n` independent samples.
pub trait Llm: Send + Sync {
    fn model_name(&self) -> &str;
    fn complete(&self, prompt: &str, temperature: f64, n: usize) -> Result<Vec<String>>;
}

pub trait Embedder: Send + Sync {
    fn model_name(&self) -> &str;
    fn embed(&self, input: EmbedInput<'_>) -> Result<Embedding>;
}

/// The full set of model roles a run needs.
#[derive(Clone)]
pub struct Providers {
    pub vqa: Arc<dyn Vqa>,
    pub llm: Arc<dyn Llm>,
    pub image_embed: Arc<dyn Embedder>,
    pub text_embed: Arc<dyn Embedder>,
    pub sentence_embed: Arc<dyn Embedder>,
    /// Fan-out width for per-item requests.
    pub concurrency: usize,
}

impl Providers {
    pub fn vqa_answer(&self, image: &[u8], prompt: &str) -> Result<String> {
        if prompt.trim().is_empty() {
            return Err(Error::Invalid("empty VQA prompt".into()));
        }
        let answer = self.vqa.answer(image, prompt)?;
        let answer = answer.trim();
        if answer.is_empty() {
            return Err(Error::EmptyResponse);
        }
        Ok(answer.to_string())
    }

    pub fn llm_complete(&self, prompt: &str, temperature: f64, n: usize) -> Result<Vec<String>> {
        check_llm_args(temperature, n)?;
        let out = self.llm.complete(prompt, temperature, n)?;
        if out.len() != n {
            return Err(Error::Provider(format!(
                "asked for {n} completions, got {}",
                out.len()
            )));
        }
        Ok(out)
    }

    pub fn embed_image(&self, image: &[u8]) -> Result<Embedding> {
        embed_checked(&*self.image_embed, EmbedInput::Image(image))
    }

    pub fn embed_text(&self, text: &str) -> Result<Embedding> {
        embed_checked(&*self.text_embed, EmbedInput::Text(text))
    }

    pub fn embed_sentence(&self, text: &str) -> Result<Embedding> {
        embed_checked(&*self.sentence_embed, EmbedInput::Sentence(text))
    }
}

pub(crate) fn check_llm_args(temperature: f64, n: usize) -> Result<()> {
    if !(0.0..=2.0).contains(&temperature) {
        return Err(Error::Invalid(format!(
            "temperature {temperature} outside [0, 2]"
        )));
    }
    if n == 0 {
        return Err(Error::Invalid("n_samples must be >= 1".into()));
    }
    Ok(())
}

fn embed_checked(embedder: &dyn Embedder, input: EmbedInput<'_>) -> Result<Embedding> {
    if input.is_empty() {
        return Err(Error::Invalid("empty embedding input".into()));
    }
    embedder.embed(input)
}

/// Maps `f` over `items` on up to `workers` threads. Output order follows
/// input order regardless of completion order.
pub fn fan_out<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<R>>> =
        items.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("every slot filled"))
        .collect()
}
