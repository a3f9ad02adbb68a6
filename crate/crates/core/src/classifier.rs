//! Multi-modal classifier construction and test-time classification.
//!
//! Per class `c`: a unit text weight from the class name, a vision weight
//! averaged over its pseudo-labelled discovery images and their augmented
//! copies, and the blend `alpha * text + (1 - alpha) * vision`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::augment::{augment_all, AugmentationSpec};
use crate::error::{Error, Result};
use crate::model::{argmax_class, cosine, normalize, ClassWeights, ClassifierBundle, Embedding, ImageRecord, Prediction};
use crate::providers::{fan_out, Providers};
use crate::reason::{assign_images, embed_names, ImageAssignment};

pub const DEFAULT_ALPHA: f64 = 0.7;
const RUNNER_UPS: usize = 4;

pub fn build_text_classifier(
    providers: &Providers,
    refined: &[String],
    template: Option<&str>,
) -> Result<Vec<Embedding>> {
    if refined.is_empty() {
        return Err(Error::NoCandidates);
    }
    embed_names(providers, refined, template)?
        .iter()
        .map(normalize)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabeling {
    pub assignments: Vec<ImageAssignment>,
    pub support: BTreeMap<String, usize>,
}

impl PseudoLabeling {
    pub fn from_assignments(assignments: Vec<ImageAssignment>) -> Self {
        let mut support = BTreeMap::new();
        for a in &assignments {
            *support.entry(a.name.clone()).or_insert(0) += 1;
        }
        Self { assignments, support }
    }

    pub fn members(&self, class: &str) -> Vec<&str> {
        let mut ids: Vec<&str> = self
            .assignments
            .iter()
            .filter(|a| a.name == class)
            .map(|a| a.image_id.as_str())
            .collect();
        ids.sort_unstable();
        ids
    }
}

/// Labels every discovery image with its nearest refined name.
pub fn pseudo_label(
    refined: &[String],
    refined_vectors: &[Embedding],
    discovery: &[(String, Embedding)],
) -> Result<PseudoLabeling> {
    Ok(PseudoLabeling::from_assignments(assign_images(
        refined,
        refined_vectors,
        discovery,
    )?))
}

/// `(1/n) * sum(normalize(v))`, summed in the given order.
pub fn mean_of_unit(vectors: &[Embedding]) -> Result<Embedding> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Invalid("mean of zero vectors".into()))?;
    let mut acc = Embedding::zeros(first.dim());
    for v in vectors {
        acc.add_assign(&normalize(v)?)?;
    }
    Ok(acc.scaled(1.0 / vectors.len() as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisionWeight {
    pub vector: Embedding,
    /// Embeddings averaged: `support * (k + 1)`.
    pub terms: usize,
}

/// Vision weight for each class in `classes`: the mean unit embedding of its
/// members and `spec.k` augmented copies of each. Not re-normalized.
pub fn build_image_classifier(
    providers: &Providers,
    classes: &[String],
    labeling: &PseudoLabeling,
    images: &[ImageRecord],
    spec: &AugmentationSpec,
) -> Result<Vec<VisionWeight>> {
    let by_id: BTreeMap<&str, &ImageRecord> = images.iter().map(|r| (r.id.as_str(), r)).collect();
    // (class index, member order, sample bytes) in fixed order
    let mut samples: Vec<(usize, Vec<u8>)> = Vec::new();
    for (ci, class) in classes.iter().enumerate() {
        let members = labeling.members(class);
        if members.is_empty() {
            return Err(Error::Invalid(format!("class {class:?} has no supporting images")));
        }
        for id in members {
            let record = by_id
                .get(id)
                .ok_or_else(|| Error::Invalid(format!("pseudo-labelled image {id} not found")))?;
            let bytes = record.load_bytes()?;
            samples.push((ci, bytes.to_vec()));
            for aug in augment_all(&bytes, id, spec)? {
                samples.push((ci, aug));
            }
        }
    }
    let embedded = fan_out(&samples, providers.concurrency, |(_, b)| providers.embed_image(b))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mut grouped: Vec<Vec<Embedding>> = vec![Vec::new(); classes.len()];
    for ((ci, _), v) in samples.iter().zip(embedded) {
        grouped[*ci].push(v);
    }
    grouped
        .into_iter()
        .map(|vs| {
            Ok(VisionWeight {
                terms: vs.len(),
                vector: mean_of_unit(&vs)?,
            })
        })
        .collect()
}

pub fn fuse(text: &Embedding, image: &Embedding, alpha: f64) -> Result<Embedding> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    if text.dim() != image.dim() {
        return Err(Error::DimMismatch {
            left: text.dim(),
            right: image.dim(),
        });
    }
    let values = text
        .values()
        .iter()
        .zip(image.values())
        .map(|(t, i)| alpha * t + (1.0 - alpha) * i)
        .collect();
    Embedding::new(values)
}

pub fn assemble_bundle(
    names: &[String],
    text: &[Embedding],
    vision: &[Embedding],
    support: &BTreeMap<String, usize>,
    alpha: f64,
    k_augment: usize,
) -> Result<ClassifierBundle> {
    if names.len() != text.len() || names.len() != vision.len() {
        return Err(Error::Invalid("classifier parts have different class counts".into()));
    }
    let classes = names
        .iter()
        .zip(text.iter().zip(vision))
        .map(|(name, (t, v))| {
            Ok(ClassWeights {
                name: name.clone(),
                support: support.get(name).copied().unwrap_or(0),
                text: t.clone(),
                image: v.clone(),
                fused: fuse(t, v, alpha)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClassifierBundle {
        classes,
        alpha,
        k_augment,
    })
}

/// Re-blends an existing bundle at a different `alpha`.
pub fn refuse(bundle: &ClassifierBundle, alpha: f64) -> Result<ClassifierBundle> {
    let mut out = bundle.clone();
    out.alpha = alpha;
    for c in &mut out.classes {
        c.fused = fuse(&c.text, &c.image, alpha)?;
    }
    Ok(out)
}

/// Predictions over pre-computed test embeddings, sorted by image id.
pub fn classify_embedded(
    test: &[(String, Embedding)],
    bundle: &ClassifierBundle,
) -> Result<Vec<Prediction>> {
    let mut out = test
        .iter()
        .map(|(id, v)| {
            let (name, score) = argmax_class(v, bundle.fused())?;
            let mut scored: Vec<(String, f64)> = bundle
                .classes
                .iter()
                .filter(|c| &c.name != name)
                .map(|c| Ok((c.name.clone(), cosine(v, &c.fused)?)))
                .collect::<Result<_>>()?;
            scored.sort_by(|a, b| b.1.total_cmp(&a.1));
            scored.truncate(RUNNER_UPS);
            Ok(Prediction {
                image_id: id.clone(),
                predicted_name: name.clone(),
                score,
                runner_ups: scored,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    Ok(out)
}

pub fn embed_images(providers: &Providers, images: &[ImageRecord]) -> Result<Vec<(String, Embedding)>> {
    fan_out(images, providers.concurrency, |r| {
        Ok((r.id.clone(), providers.embed_image(&r.load_bytes()?)?))
    })
    .into_iter()
    .collect()
}

pub fn classify(
    providers: &Providers,
    test_images: &[ImageRecord],
    bundle: &ClassifierBundle,
) -> Result<Vec<Prediction>> {
    classify_embedded(&embed_images(providers, test_images)?, bundle)
}
