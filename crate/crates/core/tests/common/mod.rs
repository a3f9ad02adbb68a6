#![allow(dead_code)]

use std::path::PathBuf;

use finer_core::model::{AttributeBundle, AttributeDescription, GENERAL_ATTRIBUTE};
use finer_core::reason::{parse_reasoner_output, render_reason_prompt};
use finer_core::translate::templates::Templates;
use finer_core::translate::{render_describe, render_general, render_how_to, render_identify};
use serde::Deserialize;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests")
}

/// One dog image described along two attributes plus the general one.
pub fn greyhound_bundle() -> AttributeBundle {
    let pairs = [
        ("body shape", "a dog with a long body and a short tail"),
        ("coat color", "grey"),
        (GENERAL_ATTRIBUTE, "a grey dog standing on a wooden floor"),
    ];
    AttributeBundle {
        image_id: "italian_greyhound.jpg".into(),
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

/// `(golden file name, rendered prompt)` for every template.
pub fn rendered_prompts() -> Vec<(&'static str, String)> {
    let t = Templates::default();
    vec![
        ("identify.txt", render_identify(&t).unwrap()),
        ("how_to.txt", render_how_to(&t, "dog").unwrap()),
        ("describe.txt", render_describe(&t, "dog", "body shape").unwrap()),
        ("general.txt", render_general(&t).unwrap()),
        ("reason.txt", render_reason_prompt(&t, &greyhound_bundle(), 3).unwrap()),
    ]
}

/// Compares every prompt with its golden file. `FINER_BLESS=1` rewrites them.
pub fn check_goldens() -> Result<(), String> {
    let dir = data_dir().join("golden");
    let bless = std::env::var_os("FINER_BLESS").is_some();
    for (file, prompt) in rendered_prompts() {
        let path = dir.join(file);
        if bless {
            std::fs::write(&path, &prompt).unwrap();
            continue;
        }
        let golden = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        if golden != prompt {
            return Err(format!("{file} differs from its golden copy:\n{prompt}"));
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
pub struct ParserCase {
    pub name: String,
    pub input: String,
    pub names: Vec<String>,
    #[serde(default)]
    pub summary: Option<Vec<String>>,
}

pub fn parser_corpus() -> Vec<ParserCase> {
    let text = std::fs::read_to_string(data_dir().join("data/parser_corpus.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn check_parser_case(case: &ParserCase) -> Result<(), String> {
    let out = parse_reasoner_output(&case.name, &case.input);
    if out.names != case.names {
        return Err(format!("{}: names {:?}, expected {:?}", case.name, out.names, case.names));
    }
    if let Some(summary) = &case.summary {
        if &out.summary != summary {
            return Err(format!("{}: summary {:?}, expected {summary:?}", case.name, out.summary));
        }
    }
    if out.raw_text != case.input {
        return Err(format!("{}: raw text not preserved", case.name));
    }
    Ok(())
}
