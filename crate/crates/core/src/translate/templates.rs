//! Prompt templates with `{placeholder}` substitution.

use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::LazyLock;

use crate::error::{Error, Result};

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    Identify,
    HowTo,
    Describe,
    GeneralDescribe,
    Reason,
}

impl TemplateName {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::Identify => "identify",
            TemplateName::HowTo => "how_to",
            TemplateName::Describe => "describe",
            TemplateName::GeneralDescribe => "general_describe",
            TemplateName::Reason => "reason",
        }
    }
}

/// Which How-to body to use: with the bird-attribute example or without.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HowToVariant {
    #[default]
    BirdExample,
    Plain,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: String,
    /// Bound to `{in_context}` when present.
    pub in_context: Option<String>,
}

impl PromptTemplate {
    pub fn new(name: TemplateName, body: impl Into<String>) -> Self {
        Self {
            name,
            body: body.into(),
            in_context: None,
        }
    }

    pub fn with_in_context(mut self, block: impl Into<String>) -> Self {
        self.in_context = Some(block.into());
        self
    }

    pub fn placeholders(&self) -> Vec<&str> {
        let mut out: Vec<&str> = PLACEHOLDER
            .captures_iter(&self.body)
            .map(|c| c.get(1).unwrap().as_str())
            .collect();
        out.dedup();
        out
    }

    /// Substitutes every placeholder. Unbound placeholders are an error;
    /// extra bindings are ignored.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<String> {
        let mut missing = None;
        let out = PLACEHOLDER.replace_all(&self.body, |caps: &regex::Captures<'_>| {
            let key = caps.get(1).unwrap().as_str();
            if key == "in_context" {
                if let Some(block) = &self.in_context {
                    return block.clone();
                }
            }
            match vars.iter().find(|(k, _)| *k == key) {
                Some((_, v)) => v.to_string(),
                None => {
                    missing.get_or_insert_with(|| key.to_string());
                    String::new()
                }
            }
        });
        if let Some(key) = missing {
            return Err(Error::Template {
                template: self.name.as_str().into(),
                message: format!("unbound placeholder {{{key}}}"),
            });
        }
        Ok(out.into_owned())
    }
}

/// Drops the single trailing newline every template file carries.
fn body(text: &str) -> String {
    text.strip_suffix('\n').unwrap_or(text).to_string()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub identify: PromptTemplate,
    pub how_to: PromptTemplate,
    pub describe: PromptTemplate,
    pub general_describe: PromptTemplate,
    pub reason: PromptTemplate,
}

impl Templates {
    pub fn shipped(variant: HowToVariant) -> Self {
        let how_to = match variant {
            HowToVariant::BirdExample => {
                PromptTemplate::new(TemplateName::HowTo, body(include_str!("../../templates/how_to.txt")))
                    .with_in_context(body(include_str!("../../templates/how_to.in_context.txt")))
            }
            HowToVariant::Plain => PromptTemplate::new(
                TemplateName::HowTo,
                body(include_str!("../../templates/how_to_plain.txt")),
            ),
        };
        Self {
            identify: PromptTemplate::new(
                TemplateName::Identify,
                body(include_str!("../../templates/identify.txt")),
            )
            .with_in_context(body(include_str!("../../templates/identify.in_context.txt"))),
            how_to,
            describe: PromptTemplate::new(
                TemplateName::Describe,
                body(include_str!("../../templates/describe.txt")),
            ),
            general_describe: PromptTemplate::new(
                TemplateName::GeneralDescribe,
                body(include_str!("../../templates/general_describe.txt")),
            ),
            reason: PromptTemplate::new(
                TemplateName::Reason,
                body(include_str!("../../templates/reason.txt")),
            ),
        }
    }

    /// Shipped templates, with any file present in `dir` taking precedence.
    /// File names follow the shipped set (`identify.txt`,
    /// `identify.in_context.txt`, `how_to.txt`, ...).
    pub fn load(dir: &Path, variant: HowToVariant) -> Result<Self> {
        let mut t = Self::shipped(variant);
        let read = |name: &str| -> Result<Option<String>> {
            let p = dir.join(name);
            match std::fs::read_to_string(&p) {
                Ok(s) => Ok(Some(body(&s))),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(Error::io(p, e)),
            }
        };
        let how_to_file = match variant {
            HowToVariant::BirdExample => "how_to.txt",
            HowToVariant::Plain => "how_to_plain.txt",
        };
        for (slot, file) in [
            (&mut t.identify, "identify.txt"),
            (&mut t.how_to, how_to_file),
            (&mut t.describe, "describe.txt"),
            (&mut t.general_describe, "general_describe.txt"),
            (&mut t.reason, "reason.txt"),
        ] {
            if let Some(b) = read(file)? {
                slot.body = b;
            }
        }
        if let Some(ctx) = read("identify.in_context.txt")? {
            t.identify.in_context = Some(ctx);
        }
        if variant == HowToVariant::BirdExample {
            if let Some(ctx) = read("how_to.in_context.txt")? {
                t.how_to.in_context = Some(ctx);
            }
        }
        Ok(t)
    }
}

impl Default for Templates {
    fn default() -> Self {
        Self::shipped(HowToVariant::default())
    }
}
