//! Seeded random augmentation of discovery images.
//!
//! Every augmented sample is a pure function of `(seed, image id, index)`
//! and is re-encoded as PNG, so provider cache keys stay stable.

use std::collections::BTreeMap;
use std::io::Cursor;

use image::{imageops, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugOp {
    RandomCrop,
    ColorJitter,
    HorizontalFlip,
    Rotation,
    Perspective,
}

impl AugOp {
    pub const ALL: [AugOp; 5] = [
        AugOp::RandomCrop,
        AugOp::ColorJitter,
        AugOp::HorizontalFlip,
        AugOp::Rotation,
        AugOp::Perspective,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationSpec {
    /// Augmented copies per discovery image.
    pub k: usize,
    pub seed: u64,
    /// Ops in application order.
    pub ops: Vec<AugOp>,
    /// Probability each selected op actually fires; missing ops use 0.5.
    pub apply_prob: BTreeMap<AugOp, f64>,
    /// Pick a random non-empty subset of `ops` per sample before gating.
    pub random_choice: bool,
    /// Area fraction range kept by the crop.
    pub crop_scale: (f64, f64),
    /// Max relative change of brightness, contrast and saturation.
    pub jitter: f64,
    pub max_rotation_deg: f64,
    /// Max corner displacement as a fraction of half the image side.
    pub perspective: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            seed: 0,
            ops: AugOp::ALL.to_vec(),
            apply_prob: AugOp::ALL.iter().map(|&op| (op, 0.5)).collect(),
            random_choice: true,
            crop_scale: (0.6, 1.0),
            jitter: 0.3,
            max_rotation_deg: 30.0,
            perspective: 0.3,
        }
    }
}

impl AugmentationSpec {
    /// Only `ops`, each always applied.
    pub fn only(ops: &[AugOp]) -> Self {
        Self {
            ops: ops.to_vec(),
            apply_prob: ops.iter().map(|&op| (op, 1.0)).collect(),
            random_choice: false,
            ..Self::default()
        }
    }

    pub fn prob(&self, op: AugOp) -> f64 {
        self.apply_prob.get(&op).copied().unwrap_or(0.5)
    }

    pub fn validate(&self) -> Result<()> {
        if self.apply_prob.values().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("augment probabilities must lie in [0, 1]".into()));
        }
        let (lo, hi) = self.crop_scale;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Config("crop_scale must satisfy 0 < lo <= hi <= 1".into()));
        }
        if self.jitter < 0.0 || self.max_rotation_deg < 0.0 || !(0.0..1.0).contains(&self.perspective) {
            return Err(Error::Config("augment magnitudes out of range".into()));
        }
        Ok(())
    }

    fn rng_for(&self, image_id: &str, index: usize) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(image_id.as_bytes());
        h.update([0u8]);
        h.update((index as u64).to_le_bytes());
        let mut key = [0u8; 32];
        key.copy_from_slice(&h.finalize());
        ChaCha8Rng::from_seed(key)
    }

    /// Ops that fire for sample `(image_id, index)`, in application order.
    pub fn plan(&self, image_id: &str, index: usize) -> Vec<AugOp> {
        let mut rng = self.rng_for(image_id, index);
        plan_with(self, &mut rng)
    }
}

fn plan_with(spec: &AugmentationSpec, rng: &mut ChaCha8Rng) -> Vec<AugOp> {
    if spec.ops.is_empty() {
        return Vec::new();
    }
    let chosen: Vec<AugOp> = if spec.random_choice {
        let m = rng.random_range(1..=spec.ops.len());
        let mut idx = rand::seq::index::sample(rng, spec.ops.len(), m).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| spec.ops[i]).collect()
    } else {
        spec.ops.clone()
    };
    chosen
        .into_iter()
        .filter(|&op| rng.random_bool(spec.prob(op)))
        .collect()
}

pub fn decode(image_id: &str, bytes: &[u8]) -> Result<RgbImage> {
    image::load_from_memory(bytes)
        .map(|i| i.to_rgb8())
        .map_err(|e| Error::Image {
            id: image_id.into(),
            message: format!("cannot decode: {e}"),
        })
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .expect("PNG encoding to memory cannot fail");
    out.into_inner()
}

/// Produces augmented sample `index` of an image as PNG bytes.
pub fn augment(bytes: &[u8], image_id: &str, spec: &AugmentationSpec, index: usize) -> Result<Vec<u8>> {
    let img = decode(image_id, bytes)?;
    Ok(encode_png(&augment_image(&img, image_id, spec, index)))
}

pub fn augment_image(img: &RgbImage, image_id: &str, spec: &AugmentationSpec, index: usize) -> RgbImage {
    let mut rng = spec.rng_for(image_id, index);
    let plan = plan_with(spec, &mut rng);
    let mut out = img.clone();
    for op in plan {
        out = match op {
            AugOp::RandomCrop => random_crop(&out, spec.crop_scale, &mut rng),
            AugOp::ColorJitter => color_jitter(&out, spec.jitter, &mut rng),
            AugOp::HorizontalFlip => imageops::flip_horizontal(&out),
            AugOp::Rotation => {
                let deg = rng.random_range(-spec.max_rotation_deg..=spec.max_rotation_deg);
                rotate(&out, deg.to_radians())
            }
            AugOp::Perspective => perspective(&out, spec.perspective, &mut rng),
        };
    }
    out
}

/// All `k` augmented samples of one image.
pub fn augment_all(bytes: &[u8], image_id: &str, spec: &AugmentationSpec) -> Result<Vec<Vec<u8>>> {
    if spec.k == 0 {
        return Ok(Vec::new());
    }
    let img = decode(image_id, bytes)?;
    Ok((0..spec.k)
        .map(|i| encode_png(&augment_image(&img, image_id, spec, i)))
        .collect())
}

fn random_crop(img: &RgbImage, (lo, hi): (f64, f64), rng: &mut ChaCha8Rng) -> RgbImage {
    let (w, h) = img.dimensions();
    let area = if lo < hi { rng.random_range(lo..=hi) } else { lo };
    let side = area.sqrt();
    let cw = ((w as f64 * side).round() as u32).clamp(1, w);
    let ch = ((h as f64 * side).round() as u32).clamp(1, h);
    let x = rng.random_range(0..=w - cw);
    let y = rng.random_range(0..=h - ch);
    let crop = imageops::crop_imm(img, x, y, cw, ch).to_image();
    imageops::resize(&crop, w, h, imageops::FilterType::Triangle)
}

fn color_jitter(img: &RgbImage, strength: f64, rng: &mut ChaCha8Rng) -> RgbImage {
    let mut factor = || {
        if strength > 0.0 {
            rng.random_range((1.0 - strength).max(0.0)..=1.0 + strength)
        } else {
            1.0
        }
    };
    let (brightness, contrast, saturation) = (factor(), factor(), factor());
    let gray = |p: &Rgb<u8>| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
    let n = (img.width() * img.height()).max(1) as f64;
    let mean = img.pixels().map(gray).sum::<f64>() / n * brightness;
    let mut out = img.clone();
    for p in out.pixels_mut() {
        let mut c = [p[0] as f64, p[1] as f64, p[2] as f64].map(|v| v * brightness);
        c = c.map(|v| mean + (v - mean) * contrast);
        let g = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
        c = c.map(|v| g + (v - g) * saturation);
        *p = Rgb(c.map(|v| v.round().clamp(0.0, 255.0) as u8));
    }
    out
}

/// Nearest-neighbour inverse warp; out-of-bounds samples are black.
fn warp(img: &RgbImage, map: impl Fn(f64, f64) -> Option<(f64, f64)>) -> RgbImage {
    let (w, h) = img.dimensions();
    RgbImage::from_fn(w, h, |x, y| {
        map(x as f64 + 0.5, y as f64 + 0.5)
            .and_then(|(sx, sy)| {
                let (ix, iy) = (sx.floor(), sy.floor());
                (ix >= 0.0 && iy >= 0.0 && ix < w as f64 && iy < h as f64)
                    .then(|| *img.get_pixel(ix as u32, iy as u32))
            })
            .unwrap_or(Rgb([0, 0, 0]))
    })
}

fn rotate(img: &RgbImage, theta: f64) -> RgbImage {
    let (cx, cy) = (img.width() as f64 / 2.0, img.height() as f64 / 2.0);
    let (s, c) = theta.sin_cos();
    warp(img, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        Some((cx + c * dx + s * dy, cy - s * dx + c * dy))
    })
}

fn perspective(img: &RgbImage, distortion: f64, rng: &mut ChaCha8Rng) -> RgbImage {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let (dx, dy) = (distortion * w / 2.0, distortion * h / 2.0);
    let mut jitter = |max: f64| if max > 0.0 { rng.random_range(0.0..=max) } else { 0.0 };
    let src = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let dst = [
        (jitter(dx), jitter(dy)),
        (w - jitter(dx), jitter(dy)),
        (w - jitter(dx), h - jitter(dy)),
        (jitter(dx), h - jitter(dy)),
    ];
    // homography taking output coordinates back to source coordinates
    let Some(hm) = homography(&dst, &src) else {
        return img.clone();
    };
    warp(img, |x, y| {
        let d = hm[6] * x + hm[7] * y + 1.0;
        (d.abs() > 1e-12).then(|| {
            (
                (hm[0] * x + hm[1] * y + hm[2]) / d,
                (hm[3] * x + hm[4] * y + hm[5]) / d,
            )
        })
    })
}

/// Solves for the 8 homography coefficients mapping `from[i]` to `to[i]`.
fn homography(from: &[(f64, f64); 4], to: &[(f64, f64); 4]) -> Option<[f64; 8]> {
    let mut a = [[0.0f64; 9]; 8];
    for i in 0..4 {
        let ((x, y), (u, v)) = (from[i], to[i]);
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    for col in 0..8 {
        let pivot = (col..8).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        let pivot_row = a[col];
        for (r, row) in a.iter_mut().enumerate() {
            if r != col {
                let f = row[col] / pivot_row[col];
                for (x, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                    *x -= f * p;
                }
            }
        }
    }
    let mut out = [0.0; 8];
    for (i, o) in out.iter_mut().enumerate() {
        *o = a[i][8] / a[i][i];
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image() -> RgbImage {
        RgbImage::from_fn(24, 16, |x, y| Rgb([(x * 10) as u8, (y * 15) as u8, ((x + y) * 5) as u8]))
    }

    #[test]
    fn zero_k_produces_nothing() {
        let png = encode_png(&test_image());
        let spec = AugmentationSpec {
            k: 0,
            ..AugmentationSpec::default()
        };
        assert!(augment_all(&png, "a", &spec).unwrap().is_empty());
    }

    #[test]
    fn deterministic_per_seed_image_index() {
        let png = encode_png(&test_image());
        let spec = AugmentationSpec::default();
        for i in 0..5 {
            assert_eq!(augment(&png, "a", &spec, i).unwrap(), augment(&png, "a", &spec, i).unwrap());
        }
        let all: Vec<_> = (0..8).map(|i| augment(&png, "a", &spec, i).unwrap()).collect();
        assert!(all.iter().any(|a| a != &all[0]));
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = test_image();
        let spec = AugmentationSpec::only(&[AugOp::HorizontalFlip]);
        let once = augment_image(&img, "a", &spec, 0);
        assert_ne!(once, img);
        assert_eq!(augment_image(&once, "a", &spec, 0), img);
    }

    #[test]
    fn each_op_keeps_dimensions() {
        let img = test_image();
        for op in AugOp::ALL {
            let out = augment_image(&img, "a", &AugmentationSpec::only(&[op]), 3);
            assert_eq!(out.dimensions(), img.dimensions(), "{op:?}");
        }
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img = test_image();
        assert_eq!(rotate(&img, 0.0), img);
    }

    #[test]
    fn homography_identity() {
        let sq = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let h = homography(&sq, &sq).unwrap();
        let expect = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        for (a, b) in h.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn undecodable_names_the_image() {
        let err = augment(b"not an image", "img-7", &AugmentationSpec::default(), 0).unwrap_err();
        assert!(err.to_string().contains("img-7"));
    }

    #[test]
    fn plan_respects_probabilities() {
        let mut spec = AugmentationSpec {
            apply_prob: AugOp::ALL.iter().map(|&op| (op, 0.0)).collect(),
            ..Default::default()
        };
        assert!((0..20).all(|i| spec.plan("x", i).is_empty()));
        spec.apply_prob.insert(AugOp::Rotation, 1.0);
        spec.random_choice = false;
        assert!((0..20).all(|i| spec.plan("x", i) == vec![AugOp::Rotation]));
        spec.apply_prob.insert(AugOp::Rotation, 1.5);
        assert!(spec.validate().is_err());
    }
}
