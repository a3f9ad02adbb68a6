//! Candidate-name reasoning: build the Reason prompt from an image's
//! attribute descriptions, parse the LLM's JSON reply, merge names across
//! images, and drop names no discovery image picks as its nearest.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{argmax_class, AttributeBundle, CandidateSet, Embedding};
use crate::providers::{fan_out, Providers};
use crate::translate::Templates;

/// Display form of a name: trimmed, internal whitespace collapsed, trailing
/// periods removed. `None` if nothing is left.
pub fn normalize_name(name: &str) -> Option<String> {
    let collapsed = name.split_whitespace().collect::<Vec<_>>().join(" ");
    let cleaned = collapsed.trim_end_matches('.').trim_end();
    (!cleaned.is_empty()).then(|| cleaned.to_string())
}

/// Equality key for names: the display form, case-folded.
pub fn name_key(name: &str) -> Option<String> {
    normalize_name(name).map(|n| n.to_lowercase())
}

/// Insertion-ordered set of names under [`name_key`] equality. The first
/// spelling seen is the one kept for display.
#[derive(Debug, Clone, Default)]
pub struct NameSet {
    keys: HashSet<String>,
    names: Vec<(String, String)>,
}

impl NameSet {
    pub fn insert(&mut self, name: &str) -> bool {
        let (Some(display), Some(key)) = (normalize_name(name), name_key(name)) else {
            return false;
        };
        if !self.keys.insert(key.clone()) {
            return false;
        }
        self.names.push((key, display));
        true
    }

    pub fn remove(&mut self, name: &str) -> bool {
        let Some(key) = name_key(name) else { return false };
        if !self.keys.remove(&key) {
            return false;
        }
        self.names.retain(|(k, _)| *k != key);
        true
    }

    pub fn contains(&self, name: &str) -> bool {
        name_key(name).is_some_and(|k| self.keys.contains(&k))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn into_vec(self) -> Vec<String> {
        self.names.into_iter().map(|(_, d)| d).collect()
    }

    /// Canonical order: by key, then display spelling.
    pub fn into_sorted_vec(mut self) -> Vec<String> {
        self.names.sort();
        self.into_vec()
    }
}

fn number_word(n: usize) -> String {
    const WORDS: [&str; 11] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ];
    WORDS.get(n).map(|w| w.to_string()).unwrap_or_else(|| n.to_string())
}

fn capitalized(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Renders the Reason prompt for one image. Attributes whose description
/// came back empty are left out of the pair block.
pub fn render_reason_prompt(
    templates: &Templates,
    bundle: &AttributeBundle,
    names_per_image: usize,
) -> Result<String> {
    let pairs: Vec<String> = bundle
        .descriptions
        .iter()
        .filter(|d| !d.empty && !d.text.trim().is_empty())
        .map(|d| format!("{}: {}", d.attribute, d.text.trim()))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Invalid(format!(
            "image {} has no attribute descriptions to reason over",
            bundle.image_id
        )));
    }
    let n = number_word(names_per_image);
    templates.reason.render(&[
        ("super", &bundle.super_category),
        ("pairs", &pairs.join("\n")),
        ("n_names", &n),
        ("n_names_cap", &capitalized(&n)),
    ])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonerOutput {
    pub image_id: String,
    pub summary: Vec<String>,
    pub names: Vec<String>,
    pub raw_text: String,
}

static TRAILING_COMMA: LazyLock<Regex> = LazyLock::new(|| Regex::new(r",(\s*[}\]])").unwrap());
static NAMES_KEY_LIST: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?i)["']?[a-z _-]*names?["']?\s*:\s*\["#).unwrap()
});
static QUOTED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#""((?:[^"\\]|\\.)*)"|'([^'\n]*)'"#).unwrap());
static NAMES_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)possible names[ \t]*:[ \t]*(.+)$").unwrap());

/// Everything between the first ``` fence pair, or the whole text.
fn strip_fences(raw: &str) -> &str {
    let Some(start) = raw.find("```") else { return raw };
    let after = &raw[start + 3..];
    // skip a language tag such as ```json
    let after = after.trim_start_matches(|c: char| c.is_ascii_alphanumeric());
    match after.find("```") {
        Some(end) => &after[..end],
        None => after,
    }
}

/// First balanced `{...}` in `text`, honouring JSON string quoting.
fn first_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

fn parse_object(candidate: &str) -> Option<Value> {
    if let Ok(v) = serde_json::from_str::<Value>(candidate) {
        return Some(v);
    }
    let repaired = TRAILING_COMMA.replace_all(candidate, "$1");
    let repaired = repaired.replace(['\u{201c}', '\u{201d}'], "\"");
    serde_json::from_str::<Value>(&repaired).ok()
}

fn strings_of(v: &Value) -> Vec<String> {
    match v {
        Value::String(s) => s.split([',', '\n']).map(str::to_string).collect(),
        Value::Array(items) => items
            .iter()
            .filter_map(|i| match i {
                Value::String(s) => Some(s.clone()),
                Value::Object(m) => m.get("name").and_then(Value::as_str).map(str::to_string),
                _ => None,
            })
            .collect(),
        _ => Vec::new(),
    }
}

/// Looks for a key equal to `exact`, else containing `fragment`, depth first.
fn find_key<'a>(v: &'a Value, exact: &str, fragment: &str) -> Option<&'a Value> {
    let Value::Object(map) = v else { return None };
    if let Some((_, val)) = map.iter().find(|(k, _)| k.eq_ignore_ascii_case(exact)) {
        return Some(val);
    }
    if let Some((_, val)) = map
        .iter()
        .find(|(k, _)| k.to_lowercase().contains(fragment))
    {
        return Some(val);
    }
    map.values().find_map(|child| find_key(child, exact, fragment))
}

fn clean_names(names: Vec<String>) -> Vec<String> {
    names
        .into_iter()
        .map(|n| {
            n.trim()
                .trim_matches(|c: char| matches!(c, '"' | '\'' | '[' | ']'))
                .to_string()
        })
        .filter_map(|n| normalize_name(&n))
        .collect()
}

/// Parses a Reason completion. Tries, in order: the first JSON object
/// (after stripping code fences), the same object with trailing commas and
/// curly quotes repaired, quoted strings after a `"names"`-like key (which
/// recovers truncated output), and a `possible names: a, b, c` line. When
/// nothing matches the result has no names.
pub fn parse_reasoner_output(image_id: &str, raw: &str) -> ReasonerOutput {
    let mut out = ReasonerOutput {
        image_id: image_id.into(),
        summary: Vec::new(),
        names: Vec::new(),
        raw_text: raw.into(),
    };
    let body = strip_fences(raw);
    for text in [body, raw] {
        if let Some(obj) = first_json_object(text).and_then(parse_object) {
            if let Some(s) = find_key(&obj, "summary", "summar") {
                out.summary = strings_of(s).into_iter().map(|s| s.trim().to_string()).collect();
            }
            if let Some(n) = find_key(&obj, "names", "name") {
                out.names = clean_names(strings_of(n));
            }
            if !out.names.is_empty() {
                return out;
            }
        }
    }
    if let Some(m) = NAMES_KEY_LIST.find(raw) {
        let tail = &raw[m.end()..];
        let list = tail.split(']').next().unwrap_or(tail);
        let names = QUOTED
            .captures_iter(list)
            .filter_map(|c| c.get(1).or(c.get(2)).map(|m| m.as_str().to_string()))
            .collect();
        out.names = clean_names(names);
        if !out.names.is_empty() {
            return out;
        }
    }
    if let Some(c) = NAMES_LINE.captures(raw) {
        let line = c.get(1).unwrap().as_str();
        if !line.trim_start().starts_with('<') {
            out.names = clean_names(line.split(',').map(str::to_string).collect());
            if !out.names.is_empty() {
                return out;
            }
        }
    }
    log::warn!("image {image_id}: no candidate names recovered from reasoner output");
    out
}

/// Prompts the LLM once per image and parses each reply.
pub fn reason_names(
    providers: &Providers,
    templates: &Templates,
    bundles: &[AttributeBundle],
    names_per_image: usize,
    temperature: f64,
) -> Result<Vec<ReasonerOutput>> {
    fan_out(bundles, providers.concurrency, |b| {
        let prompt = render_reason_prompt(templates, b, names_per_image)?;
        let raw = providers
            .llm_complete(&prompt, temperature, 1)?
            .pop()
            .unwrap_or_default();
        Ok(parse_reasoner_output(&b.image_id, &raw))
    })
    .into_iter()
    .collect()
}

/// Merges names under [`name_key`] equality into canonical sorted order.
pub fn dedup<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<Vec<String>> {
    let mut set = NameSet::default();
    for n in names {
        set.insert(n);
    }
    if set.is_empty() {
        return Err(Error::NoCandidates);
    }
    Ok(set.into_sorted_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAssignment {
    pub image_id: String,
    pub name: String,
    pub score: f64,
}

/// Assigns each image to the name whose embedding has the largest cosine
/// similarity. Ties go to the earlier name.
pub fn assign_images(
    names: &[String],
    name_vectors: &[Embedding],
    images: &[(String, Embedding)],
) -> Result<Vec<ImageAssignment>> {
    if names.len() != name_vectors.len() {
        return Err(Error::Invalid("one vector per name required".into()));
    }
    images
        .iter()
        .map(|(id, v)| {
            let (name, score) = argmax_class(v, names.iter().zip(name_vectors))?;
            Ok(ImageAssignment {
                image_id: id.clone(),
                name: name.clone(),
                score,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoised {
    pub candidates: CandidateSet,
    pub assignments: Vec<ImageAssignment>,
}

/// Keeps the names that at least one image picks as its nearest.
pub fn denoise_embedded(
    raw: &[String],
    name_vectors: &[Embedding],
    images: &[(String, Embedding)],
) -> Result<Denoised> {
    if raw.is_empty() {
        return Err(Error::NoCandidates);
    }
    let assignments = assign_images(raw, name_vectors, images)?;
    let chosen: HashSet<&str> = assignments.iter().map(|a| a.name.as_str()).collect();
    let (refined, removed): (Vec<String>, Vec<String>) =
        raw.iter().cloned().partition(|n| chosen.contains(n.as_str()));
    Ok(Denoised {
        candidates: CandidateSet {
            raw: raw.to_vec(),
            refined,
            removed,
        },
        assignments,
    })
}

/// Text fed to the text encoder for a class name.
pub fn class_prompt(name: &str, template: Option<&str>) -> String {
    match template {
        Some(t) => t.replace("{c}", name),
        None => name.to_string(),
    }
}

pub fn embed_names(
    providers: &Providers,
    names: &[String],
    template: Option<&str>,
) -> Result<Vec<Embedding>> {
    fan_out(names, providers.concurrency, |n| {
        providers.embed_text(&class_prompt(n, template))
    })
    .into_iter()
    .collect()
}

pub fn denoise(
    providers: &Providers,
    raw: &[String],
    discovery: &[(String, Embedding)],
    template: Option<&str>,
) -> Result<Denoised> {
    let vectors = embed_names(providers, raw, template)?;
    denoise_embedded(raw, &vectors, discovery)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AttributeDescription, GENERAL_ATTRIBUTE};

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn bundle(pairs: &[(&str, &str)]) -> AttributeBundle {
        AttributeBundle {
            image_id: "img".into(),
            super_category: "dog".into(),
            attributes: pairs.iter().map(|p| p.0.to_string()).collect(),
            descriptions: pairs
                .iter()
                .map(|(a, t)| AttributeDescription {
                    attribute: a.to_string(),
                    text: t.to_string(),
                    empty: false,
                })
                .collect(),
        }
    }

    #[test]
    fn reason_prompt_contents() {
        let t = Templates::default();
        let b = bundle(&[
            ("body shape", "a dog with a long body and a short tail"),
            (GENERAL_ATTRIBUTE, "a grey dog on grass"),
        ]);
        let p = render_reason_prompt(&t, &b, 3).unwrap();
        assert!(p.contains("body shape: a dog with a long body and a short tail"));
        assert!(p.contains("three possible names"));
        assert!(p.contains("delimited by triple backticks with five sentences"));
        assert!(p.contains("JSON"));

        let one = render_reason_prompt(&t, &bundle(&[("size", "small")]), 3).unwrap();
        let block = one.split("```").nth(1).unwrap();
        assert_eq!(block, "\nsize: small\n");
    }

    #[test]
    fn reason_prompt_needs_pairs() {
        let mut b = bundle(&[("size", "")]);
        b.descriptions[0].empty = true;
        assert!(render_reason_prompt(&Templates::default(), &b, 3).is_err());
    }

    #[test]
    fn normalize_name_examples() {
        assert_eq!(name_key(" dark-eyed junco."), name_key("Dark-eyed Junco"));
        assert_eq!(normalize_name("BMW  X5").unwrap(), "BMW X5");
        assert_eq!(normalize_name(""), None);
        assert_eq!(normalize_name("  ..."), None);

        let mut s = NameSet::default();
        assert!(s.insert("Dark-eyed Junco"));
        assert!(!s.insert(" dark-eyed junco."));
        assert_eq!(s.into_vec(), vec!["Dark-eyed Junco"]);
    }

    #[test]
    fn parse_examples() {
        let o = parse_reasoner_output(
            "i",
            r#"{"summary":["s1"],"names":["Italian Greyhound","Whippet","Greyhound"]}"#,
        );
        assert_eq!(o.names, vec!["Italian Greyhound", "Whippet", "Greyhound"]);
        assert_eq!(o.summary, vec!["s1"]);
        assert_eq!(parse_reasoner_output("i", "```json {\"names\":[\"A\"]} ```").names, vec!["A"]);
        let none = parse_reasoner_output("i", "no json here");
        assert!(none.names.is_empty());
        assert_eq!(none.raw_text, "no json here");
    }

    #[test]
    fn dedup_examples() {
        let names = ["A", "B", "C", "B", "C", "D", "C", "D", "E"];
        assert_eq!(dedup(names).unwrap(), vec!["A", "B", "C", "D", "E"]);
        assert_eq!(dedup(["whippet", "Whippet", "WHIPPET."]).unwrap(), vec!["whippet"]);
        assert!(matches!(dedup(Vec::<&str>::new()), Err(Error::NoCandidates)));
    }

    #[test]
    fn dedup_cardinality_bound() {
        let names: Vec<String> = (0..1800).map(|i| format!("name {}", i % 977)).collect();
        let d = dedup(names.iter().map(String::as_str)).unwrap();
        assert!(d.len() <= 1800);
        assert_eq!(d.len(), 977);
    }

    #[test]
    fn denoise_examples() {
        let raw = vec!["A".to_string(), "B".to_string()];
        let vecs = vec![e(&[1.0, 0.0]), e(&[0.0, 1.0])];
        let d = denoise_embedded(&raw, &vecs, &[("x".into(), e(&[1.0, 0.0]))]).unwrap();
        assert_eq!(d.candidates.refined, vec!["A"]);
        assert_eq!(d.candidates.removed, vec!["B"]);

        let imgs = vec![("x".into(), e(&[1.0, 0.1])), ("y".into(), e(&[0.1, 1.0]))];
        let d = denoise_embedded(&raw, &vecs, &imgs).unwrap();
        assert!(d.candidates.removed.is_empty());
    }

    #[test]
    fn class_prompt_template() {
        assert_eq!(class_prompt("Whippet", None), "Whippet");
        assert_eq!(class_prompt("Whippet", Some("a photo of a {c}")), "a photo of a Whippet");
    }
}
