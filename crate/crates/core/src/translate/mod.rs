//! Visual-to-text translation: super-category identification, expert
//! attribute acquisition, and per-attribute image descriptions.

pub mod templates;

use std::sync::LazyLock;

use regex::Regex;

use crate::error::{Error, Result};
use crate::model::{AttributeBundle, AttributeDescription, GENERAL_ATTRIBUTE};
use crate::providers::{fan_out, Providers};
use crate::reason::NameSet;
pub use templates::{HowToVariant, PromptTemplate, TemplateName, Templates};

pub const DEFAULT_AEK_QUERIES: usize = 10;
pub const DEFAULT_TEMPERATURE: f64 = 0.9;
/// Longer list items are sentences, not attribute names.
pub const MAX_ATTRIBUTE_WORDS: usize = 6;

pub fn render_identify(templates: &Templates) -> Result<String> {
    templates.identify.render(&[])
}

pub fn render_how_to(templates: &Templates, super_category: &str) -> Result<String> {
    templates.how_to.render(&[("super", super_category)])
}

pub fn render_describe(templates: &Templates, super_category: &str, attribute: &str) -> Result<String> {
    templates
        .describe
        .render(&[("super", super_category), ("attribute", attribute)])
}

pub fn render_general(templates: &Templates) -> Result<String> {
    templates.general_describe.render(&[])
}

pub fn identify_super_category(
    providers: &Providers,
    templates: &Templates,
    image: &[u8],
) -> Result<String> {
    let answer = providers.vqa_answer(image, &render_identify(templates)?)?;
    Ok(answer.trim().to_lowercase())
}

/// Order-preserving dedup of per-image super-categories.
pub fn unique_super_categories(per_image: &[String]) -> Result<Vec<String>> {
    if per_image.is_empty() {
        return Err(Error::Invalid("no super-categories to deduplicate".into()));
    }
    let mut out: Vec<String> = Vec::new();
    for s in per_image {
        if !out.contains(s) {
            out.push(s.clone());
        }
    }
    Ok(out)
}

static LIST_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:\d+\s*[.):]|[-*•])\s*").unwrap());

/// Parses one How-to completion into attribute names. Accepts Python-style
/// lists, newline lists and comma lists, with or without numbering.
pub fn parse_attribute_list(text: &str) -> Vec<String> {
    let body = match (text.find('['), text.rfind(']')) {
        (Some(a), Some(b)) if a < b => &text[a + 1..b],
        _ => text,
    };
    body.split(['\n', ','])
        .filter_map(|item| {
            let item = LIST_MARKER.replace(item.trim(), "");
            let item = item
                .trim()
                .trim_matches(|c: char| matches!(c, '\'' | '"' | '[' | ']' | '`'))
                .trim();
            let words = item.split_whitespace().count();
            if words == 0 || words > MAX_ATTRIBUTE_WORDS || item.ends_with(':') {
                return None;
            }
            Some(item.to_string())
        })
        .collect()
}

/// Queries the LLM `n_queries` times and returns the union of parsed
/// attributes in first-seen order, with the general attribute last.
pub fn acquire_attributes(
    providers: &Providers,
    templates: &Templates,
    super_category: &str,
    n_queries: usize,
    temperature: f64,
) -> Result<Vec<String>> {
    let prompt = render_how_to(templates, super_category)?;
    let completions = providers.llm_complete(&prompt, temperature, n_queries)?;
    merge_attribute_completions(super_category, &completions)
}

pub fn merge_attribute_completions(super_category: &str, completions: &[String]) -> Result<Vec<String>> {
    let mut set = NameSet::default();
    let mut parsed_any = false;
    for (i, c) in completions.iter().enumerate() {
        let items = parse_attribute_list(c);
        if items.is_empty() {
            log::warn!("attribute completion {i} for {super_category:?} unparseable; skipped");
            continue;
        }
        parsed_any = true;
        for item in items {
            set.insert(&item);
        }
    }
    if !parsed_any {
        return Err(Error::Invalid(format!(
            "no parseable attribute list among {} completions for {super_category:?}",
            completions.len()
        )));
    }
    set.remove(GENERAL_ATTRIBUTE);
    let mut attrs = set.into_vec();
    attrs.push(GENERAL_ATTRIBUTE.to_string());
    Ok(attrs)
}

pub fn describe_attribute(
    providers: &Providers,
    templates: &Templates,
    image: &[u8],
    super_category: &str,
    attribute: &str,
) -> Result<AttributeDescription> {
    if attribute == GENERAL_ATTRIBUTE {
        return Err(Error::Invalid(
            "the general attribute is described with describe_general".into(),
        ));
    }
    let prompt = render_describe(templates, super_category, attribute)?;
    described(attribute, providers.vqa_answer(image, &prompt))
}

pub fn describe_general(
    providers: &Providers,
    templates: &Templates,
    image: &[u8],
) -> Result<AttributeDescription> {
    let prompt = render_general(templates)?;
    described(GENERAL_ATTRIBUTE, providers.vqa_answer(image, &prompt))
}

/// Empty answers become flagged gaps; other errors propagate.
fn described(attribute: &str, answer: Result<String>) -> Result<AttributeDescription> {
    match answer {
        Ok(text) => Ok(AttributeDescription {
            attribute: attribute.into(),
            text,
            empty: false,
        }),
        Err(Error::EmptyResponse) => {
            log::warn!("empty description for attribute {attribute:?}");
            Ok(AttributeDescription {
                attribute: attribute.into(),
                text: String::new(),
                empty: true,
            })
        }
        Err(e) => Err(e),
    }
}

/// Describes every attribute of one image. Requests fan out across
/// attributes; the bundle keeps acquisition order.
pub fn describe_image(
    providers: &Providers,
    templates: &Templates,
    image_id: &str,
    image: &[u8],
    super_category: &str,
    attributes: &[String],
) -> Result<AttributeBundle> {
    let descriptions = fan_out(attributes, providers.concurrency, |a| {
        if a == GENERAL_ATTRIBUTE {
            describe_general(providers, templates, image)
        } else {
            describe_attribute(providers, templates, image, super_category, a)
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let bundle = AttributeBundle {
        image_id: image_id.into(),
        super_category: super_category.into(),
        attributes: attributes.to_vec(),
        descriptions,
    };
    bundle.check()?;
    Ok(bundle)
}
