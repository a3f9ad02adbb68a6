use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::assignment::optimal_assignment;
use crate::error::{Error, Result};
use crate::model::{cosine, Embedding, Prediction};
use crate::providers::Providers;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringScore {
    pub cacc: f64,
    /// `(predicted name, ground-truth name)` pairs with at least one shared image.
    pub matching: Vec<(String, String)>,
    pub matched: usize,
    pub n: usize,
}

fn truth_of<'a>(truths: &'a HashMap<String, String>, id: &str) -> Result<&'a str> {
    truths
        .get(id)
        .map(String::as_str)
        .ok_or_else(|| Error::Invalid(format!("no ground truth for image {id}")))
}

/// Fraction of images that land in the right cluster under the best
/// one-to-one matching of predicted names to true classes.
pub fn clustering_accuracy(
    predictions: &[Prediction],
    truths: &HashMap<String, String>,
) -> Result<ClusteringScore> {
    if predictions.is_empty() {
        return Err(Error::Invalid("no predictions to score".into()));
    }
    let mut pairs = Vec::with_capacity(predictions.len());
    for p in predictions {
        pairs.push((p.predicted_name.as_str(), truth_of(truths, &p.image_id)?));
    }
    let clusters: Vec<&str> = pairs.iter().map(|p| p.0).collect::<BTreeSet<_>>().into_iter().collect();
    let classes: Vec<&str> = pairs.iter().map(|p| p.1).collect::<BTreeSet<_>>().into_iter().collect();
    let ci: BTreeMap<&str, usize> = clusters.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let ti: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let mut counts = vec![vec![0.0f64; classes.len()]; clusters.len()];
    for (p, t) in &pairs {
        counts[ci[p]][ti[t]] += 1.0;
    }
    let a = optimal_assignment(&counts)?;
    let matched = a.total.round() as usize;
    let matching = a
        .pairs
        .iter()
        .filter(|&&(r, c)| counts[r][c] > 0.0)
        .map(|&(r, c)| (clusters[r].to_string(), classes[c].to_string()))
        .collect();
    Ok(ClusteringScore {
        cacc: matched as f64 / pairs.len() as f64,
        matching,
        matched,
        n: pairs.len(),
    })
}

/// Mean cosine between the sentence embeddings of each image's predicted
/// name and its true name. `embed` is called once per distinct string.
pub fn semantic_similarity_with(
    predictions: &[Prediction],
    truths: &HashMap<String, String>,
    mut embed: impl FnMut(&str) -> Result<Embedding>,
) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Invalid("no predictions to score".into()));
    }
    let mut memo: HashMap<String, Embedding> = HashMap::new();
    let mut get = |s: &str| -> Result<Embedding> {
        if let Some(v) = memo.get(s) {
            return Ok(v.clone());
        }
        let v = embed(s)?;
        memo.insert(s.to_string(), v.clone());
        Ok(v)
    };
    let mut total = 0.0;
    for p in predictions {
        let truth = truth_of(truths, &p.image_id)?;
        total += cosine(&get(&p.predicted_name)?, &get(truth)?)?;
    }
    Ok(total / predictions.len() as f64)
}

pub fn semantic_similarity(
    providers: &Providers,
    predictions: &[Prediction],
    truths: &HashMap<String, String>,
) -> Result<f64> {
    semantic_similarity_with(predictions, truths, |s| providers.embed_sentence(s))
}
