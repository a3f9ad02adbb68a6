//! WebAssembly bindings for the static demo page in `www/`.
//!
//! The plain functions are what the page calls through the `wasm_bindgen`
//! wrappers; they are also usable (and tested) natively.

use std::collections::HashMap;

use finer_core::augment::{augment, encode_png, AugOp, AugmentationSpec};
use finer_core::eval::{clustering_accuracy, zipf_counts};
use finer_core::model::Prediction;
use image::{Rgb, RgbImage};
use wasm_bindgen::prelude::*;

/// Per-rank discovery counts of a long-tailed sample.
pub fn zipf_curve(n_classes: usize, s: f64, lo: usize, hi: usize) -> Result<Vec<u32>, String> {
    if lo == 0 || lo > hi {
        return Err(format!("need 1 <= lo <= hi, got lo={lo} hi={hi}"));
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(format!("shape must be positive, got {s}"));
    }
    Ok(zipf_counts(n_classes, s, lo, hi).into_iter().map(|c| c as u32).collect())
}

/// A quartered test card, so flips and rotations are easy to see.
pub fn test_card(size: u32) -> Vec<u8> {
    let half = size / 2;
    let img = RgbImage::from_fn(size, size, |x, y| {
        let stripe = (x / 8 + y / 8) % 2 == 0;
        match (x < half, y < half) {
            (true, true) => Rgb([220, 40, 40]),
            (false, true) => Rgb([40, 160, 60]),
            (true, false) => Rgb([40, 70, 200]),
            (false, false) if stripe => Rgb([240, 220, 40]),
            (false, false) => Rgb([30, 30, 30]),
        }
    });
    encode_png(&img)
}

fn parse_ops(ops: &str) -> Result<Vec<AugOp>, String> {
    ops.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown op {s:?}")))
        .collect()
}

/// Augmented copy `index` of `png`, applying every op in the comma-separated
/// list. An empty list uses the default random subset.
pub fn augment_preview(png: &[u8], ops: &str, seed: u64, index: usize) -> Result<Vec<u8>, String> {
    let ops = parse_ops(ops)?;
    let spec = AugmentationSpec {
        seed,
        ..if ops.is_empty() {
            AugmentationSpec::default()
        } else {
            AugmentationSpec::only(&ops)
        }
    };
    augment(png, "preview", &spec, index).map_err(|e| e.to_string())
}

/// Scores `predicted,true` lines. Returns JSON `{cacc, matched, n, matching}`.
pub fn score_pairs(text: &str) -> Result<String, String> {
    let mut predictions = Vec::new();
    let mut truths = HashMap::new();
    for (i, line) in text.lines().map(str::trim).filter(|l| !l.is_empty()).enumerate() {
        let (p, t) = line
            .split_once(',')
            .ok_or_else(|| format!("line {}: expected `predicted,true`", i + 1))?;
        let id = format!("#{i}");
        predictions.push(Prediction {
            image_id: id.clone(),
            predicted_name: p.trim().into(),
            score: 0.0,
            runner_ups: vec![],
        });
        truths.insert(id, t.trim().to_string());
    }
    let s = clustering_accuracy(&predictions, &truths).map_err(|e| e.to_string())?;
    Ok(serde_json::json!({
        "cacc": s.cacc,
        "matched": s.matched,
        "n": s.n,
        "matching": s.matching,
    })
    .to_string())
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen(js_name = zipfCurve)]
pub fn zipf_curve_js(n_classes: usize, s: f64, lo: usize, hi: usize) -> Result<Vec<u32>, JsError> {
    zipf_curve(n_classes, s, lo, hi).map_err(js)
}

#[wasm_bindgen(js_name = testCard)]
pub fn test_card_js(size: u32) -> Vec<u8> {
    test_card(size)
}

#[wasm_bindgen(js_name = augmentPreview)]
pub fn augment_preview_js(png: &[u8], ops: &str, seed: u64, index: usize) -> Result<Vec<u8>, JsError> {
    augment_preview(png, ops, seed, index).map_err(js)
}

#[wasm_bindgen(js_name = scorePairs)]
pub fn score_pairs_js(text: &str) -> Result<String, JsError> {
    score_pairs(text).map_err(js)
}
