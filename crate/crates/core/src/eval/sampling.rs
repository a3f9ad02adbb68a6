//! Discovery-set samplers: a fixed number of images per class, or a
//! Zipf-shaped long tail of per-class counts.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::model::{ImageRecord, Split};

pub const DEFAULT_PER_CLASS: usize = 3;
pub const DEFAULT_ZIPF_S: f64 = 2.0;
pub const DEFAULT_ZIPF_LO: usize = 1;
pub const DEFAULT_ZIPF_HI: usize = 10;

/// Pool entries grouped by label (sorted), each group sorted by path.
fn pool_by_class(manifest: &DatasetManifest) -> Result<BTreeMap<&str, Vec<&ManifestEntry>>> {
    let mut groups: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in manifest.pool() {
        let label = e.label.as_deref().ok_or_else(|| Error::Invalid(format!(
            "pool entry {} has no label; class-aware sampling needs labels",
            e.path
        )))?;
        groups.entry(label).or_default().push(e);
    }
    for g in groups.values_mut() {
        g.sort_by(|a, b| a.path.cmp(&b.path));
    }
    Ok(groups)
}

fn pick(
    manifest: &DatasetManifest,
    entries: &[&ManifestEntry],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<ImageRecord> {
    rand::seq::index::sample(rng, entries.len(), count)
        .into_iter()
        .map(|i| manifest.record(entries[i], Split::Discovery))
        .collect()
}

fn sorted(mut records: Vec<ImageRecord>) -> Vec<ImageRecord> {
    records.sort_by(|a, b| a.id.cmp(&b.id));
    records
}

/// Exactly `per_class` pool images from every class, drawn without
/// replacement. Output sorted by id.
pub fn sample_balanced(manifest: &DatasetManifest, per_class: usize, seed: u64) -> Result<Vec<ImageRecord>> {
    let groups = pool_by_class(manifest)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (class, entries) in &groups {
        if entries.len() < per_class {
            return Err(Error::ClassTooSmall {
                class: class.to_string(),
                available: entries.len(),
                required: per_class,
            });
        }
        out.extend(pick(manifest, entries, per_class, &mut rng));
    }
    Ok(sorted(out))
}

/// Per-rank counts: pmf `p(r) ∝ r^-s` for ranks `1..=n`, mapped affinely
/// so the largest pmf value becomes `hi` and the smallest `lo`, rounded
/// half-up.
pub fn zipf_counts(n_classes: usize, s: f64, lo: usize, hi: usize) -> Vec<usize> {
    if n_classes == 0 {
        return Vec::new();
    }
    let weights: Vec<f64> = (1..=n_classes).map(|r| (r as f64).powf(-s)).collect();
    let z: f64 = weights.iter().sum();
    let pmf: Vec<f64> = weights.iter().map(|w| w / z).collect();
    let (pmax, pmin) = (pmf[0], pmf[n_classes - 1]);
    let (lo_f, hi_f) = (lo as f64, hi as f64);
    pmf.iter()
        .map(|&p| {
            let x = if pmax > pmin {
                lo_f + (p - pmin) / (pmax - pmin) * (hi_f - lo_f)
            } else {
                hi_f
            };
            ((x + 0.5).floor() as usize).clamp(lo, hi)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZipfSample {
    /// `(class, count)` in rank order.
    pub counts: Vec<(String, usize)>,
    pub records: Vec<ImageRecord>,
}

/// Long-tail discovery set: classes are ranked in seeded random order and
/// take [`zipf_counts`] images each, capped by availability.
pub fn sample_zipf(
    manifest: &DatasetManifest,
    seed: u64,
    s: f64,
    lo: usize,
    hi: usize,
) -> Result<ZipfSample> {
    if lo > hi {
        return Err(Error::Invalid(format!("zipf bounds lo={lo} > hi={hi}")));
    }
    let groups = pool_by_class(manifest)?;
    for (class, entries) in &groups {
        if entries.len() < lo {
            return Err(Error::ClassTooSmall {
                class: class.to_string(),
                available: entries.len(),
                required: lo,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranked: Vec<(&str, &Vec<&ManifestEntry>)> = groups.iter().map(|(k, v)| (*k, v)).collect();
    ranked.shuffle(&mut rng);
    let targets = zipf_counts(ranked.len(), s, lo, hi);
    let mut counts = Vec::with_capacity(ranked.len());
    let mut records = Vec::new();
    for ((class, entries), target) in ranked.into_iter().zip(targets) {
        let n = target.min(entries.len());
        counts.push((class.to_string(), n));
        records.extend(pick(manifest, entries, n, &mut rng));
    }
    Ok(ZipfSample {
        counts,
        records: sorted(records),
    })
}
