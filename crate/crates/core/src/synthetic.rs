//! Small colored-square datasets for offline runs and tests.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::encode_png;
use crate::error::{Error, Result};

/// Five classes whose colors sit in distinct cells of a 4x4x4 RGB histogram.
pub const TOY_CLASSES: [(&str, [u8; 3]); 5] = [
    ("Ashy Storm-petrel", [32, 32, 32]),
    ("Indigo Bunting", [32, 32, 224]),
    ("Scarlet Tanager", [224, 32, 32]),
    ("Green Jay", [32, 224, 32]),
    ("American Goldfinch", [224, 224, 32]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub classes: Vec<(String, [u8; 3])>,
    pub pool_per_class: usize,
    pub test_per_class: usize,
    pub size: u32,
    /// Per-channel noise amplitude; keep below 32 so pixels stay in their cell.
    pub noise: u8,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            classes: TOY_CLASSES.iter().map(|(n, c)| (n.to_string(), *c)).collect(),
            pool_per_class: 3,
            test_per_class: 4,
            size: 24,
            noise: 20,
            seed: 0,
        }
    }
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

pub fn toy_image(color: [u8; 3], size: u32, noise: u8, rng: &mut impl Rng) -> RgbImage {
    let n = noise as i16;
    RgbImage::from_fn(size, size, |_, _| {
        let mut px = [0u8; 3];
        for (p, &c) in px.iter_mut().zip(&color) {
            *p = (c as i16 + rng.random_range(-n..=n)).clamp(0, 255) as u8;
        }
        Rgb(px)
    })
}

/// Writes PNGs plus `manifest.csv` under `dir` and returns the manifest path.
pub fn write_toy_dataset(dir: &Path, spec: &ToySpec) -> Result<PathBuf> {
    if spec.noise >= 32 {
        return Err(Error::Invalid("toy noise must stay below 32".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = csv::Writer::from_writer(Vec::new());
    rows.write_record(["path", "label", "split"]).expect("in-memory csv");
    for (name, color) in &spec.classes {
        let sub = dir.join(slug(name));
        std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let splits = std::iter::repeat_n("train", spec.pool_per_class)
            .chain(std::iter::repeat_n("test", spec.test_per_class));
        for (i, split) in splits.enumerate() {
            let rel = format!("{}/{split}_{i:02}.png", slug(name));
            let img = toy_image(*color, spec.size, spec.noise, &mut rng);
            let path = dir.join(&rel);
            std::fs::write(&path, encode_png(&img)).map_err(|e| Error::io(&path, e))?;
            rows.write_record([rel.as_str(), name, split]).expect("in-memory csv");
        }
    }
    let manifest = dir.join("manifest.csv");
    let bytes = rows.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    std::fs::write(&manifest, bytes).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::manifest::DatasetManifest;
    use crate::model::cosine;
    use crate::providers::mock::color_histogram;

    #[test]
    fn toy_dataset_loads_and_separates() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::load(&write_toy_dataset(dir.path(), &ToySpec::default()).unwrap()).unwrap();
        assert_eq!(m.class_names().len(), 5);
        assert_eq!(m.pool().count(), 15);
        assert_eq!(m.test_records().len(), 20);
        let hist = |r: &crate::model::ImageRecord| color_histogram(&r.load_bytes().unwrap()).unwrap();
        let test = m.test_records();
        for a in &test {
            for b in &test {
                let same = a.ground_truth == b.ground_truth;
                let c = cosine(&hist(a), &hist(b)).unwrap();
                assert_eq!(c > 0.99, same, "{} vs {}", a.id, b.id);
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_toy_dataset(a.path(), &ToySpec::default()).unwrap();
        write_toy_dataset(b.path(), &ToySpec::default()).unwrap();
        let p = "green_jay/train_00.png";
        assert_eq!(std::fs::read(a.path().join(p)).unwrap(), std::fs::read(b.path().join(p)).unwrap());
    }
}
