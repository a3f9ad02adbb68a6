//! Domain types shared by every stage, plus the embedding arithmetic that
//! classification rests on.
//!
//! Embeddings are held as `f64` in memory. They cross process boundaries
//! (provider responses, `classifier.json`) as 32-bit floats.

use std::fmt;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved attribute appended to every attribute list. Its description
/// comes from an unconditioned whole-image prompt.
pub const GENERAL_ATTRIBUTE: &str = "General description of the image";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Discovery,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub source: ImageSource,
    pub ground_truth: Option<String>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    Path(std::path::PathBuf),
    #[serde(skip)]
    Bytes(std::sync::Arc<Vec<u8>>),
}

impl ImageRecord {
    pub fn from_bytes(id: impl Into<String>, bytes: Vec<u8>, split: Split) -> Self {
        Self {
            id: id.into(),
            source: ImageSource::Bytes(std::sync::Arc::new(bytes)),
            ground_truth: None,
            split,
        }
    }

    pub fn with_truth(mut self, name: impl Into<String>) -> Self {
        self.ground_truth = Some(name.into());
        self
    }

    pub fn load_bytes(&self) -> Result<std::borrow::Cow<'_, [u8]>> {
        match &self.source {
            ImageSource::Bytes(b) => Ok(std::borrow::Cow::Borrowed(b.as_slice())),
            ImageSource::Path(p) => std::fs::read(p)
                .map(std::borrow::Cow::Owned)
                .map_err(|e| Error::Image {
                    id: self.id.clone(),
                    message: format!("cannot read {}: {e}", p.display()),
                }),
        }
    }
}

/// A dense embedding vector.
#[derive(Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl fmt::Debug for Embedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Embedding").field(&self.0).finish()
    }
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("embedding must have dim > 0".into()));
        }
        Ok(Self(values))
    }

    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f64).collect())
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim.max(1)])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&v| v as f32).collect()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> Result<f64> {
        self.check_dim(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn scaled(&self, factor: f64) -> Embedding {
        Embedding(self.0.iter().map(|v| v * factor).collect())
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Embedding) -> Result<()> {
        self.check_dim(other)?;
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
        Ok(())
    }

    fn check_dim(&self, other: &Embedding) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(())
    }

    /// Little-endian f32 array, base64 encoded.
    pub fn to_base64(&self) -> String {
        let bytes: Vec<u8> = self.to_f32().iter().flat_map(|v| v.to_le_bytes()).collect();
        base64::engine::general_purpose::STANDARD.encode(bytes)
    }

    pub fn from_base64(encoded: &str) -> Result<Self> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(encoded)
            .map_err(|e| Error::Invalid(format!("bad base64 embedding: {e}")))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Invalid("embedding byte length not a multiple of 4".into()));
        }
        let floats: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_f32(&floats)
    }
}

/// Scales `v` to unit L2 norm.
pub fn normalize(v: &Embedding) -> Result<Embedding> {
    let n = v.norm();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::DegenerateEmbedding);
    }
    Ok(v.scaled(1.0 / n))
}

pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    let dot = a.dot(b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Picks the classifier with the largest cosine similarity to `image`.
/// Ties go to the earliest entry.
pub fn argmax_class<'a, N: AsRef<str> + 'a>(
    image: &Embedding,
    classifiers: impl IntoIterator<Item = (&'a N, &'a Embedding)>,
) -> Result<(&'a N, f64)> {
    let mut best: Option<(&N, f64)> = None;
    for (name, w) in classifiers {
        let score = cosine(image, w)?;
        match best {
            Some((_, s)) if score <= s => {}
            _ => best = Some((name, score)),
        }
    }
    best.ok_or(Error::EmptyClassifiers)
}

/// Per-image output of a discovery run: super-category, attributes and
/// their descriptions, index-aligned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeBundle {
    pub image_id: String,
    pub super_category: String,
    pub attributes: Vec<String>,
    pub descriptions: Vec<AttributeDescription>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeDescription {
    pub attribute: String,
    pub text: String,
    /// Set when the VQA provider gave no answer.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty: bool,
}

impl AttributeBundle {
    pub fn check(&self) -> Result<()> {
        if self.descriptions.len() != self.attributes.len() {
            return Err(Error::Invalid(format!(
                "bundle {}: {} descriptions for {} attributes",
                self.image_id,
                self.descriptions.len(),
                self.attributes.len()
            )));
        }
        let general = self
            .attributes
            .iter()
            .filter(|a| a.as_str() == GENERAL_ATTRIBUTE)
            .count();
        if general != 1 {
            return Err(Error::Invalid(format!(
                "bundle {}: general attribute appears {general} times",
                self.image_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CandidateSet {
    pub raw: Vec<String>,
    pub refined: Vec<String>,
    pub removed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    pub name: String,
    pub support: usize,
    pub text: Embedding,
    pub image: Embedding,
    pub fused: Embedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierBundle {
    pub classes: Vec<ClassWeights>,
    pub alpha: f64,
    pub k_augment: usize,
}

impl ClassifierBundle {
    pub fn dim(&self) -> Option<usize> {
        self.classes.first().map(|c| c.fused.dim())
    }

    pub fn class_names(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|c| c.name.as_str())
    }

    /// `(name, fused weight)` pairs in class order, ready for [`argmax_class`].
    pub fn fused(&self) -> impl Iterator<Item = (&String, &Embedding)> {
        self.classes.iter().map(|c| (&c.name, &c.fused))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub predicted_name: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub runner_ups: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cacc: f64,
    pub sacc: f64,
    pub matching: Vec<(String, String)>,
    pub n_test: usize,
    pub config_digest: String,
}
