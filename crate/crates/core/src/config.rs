//! Run configuration: one TOML file, overridable from the command line.
//!
//! ```toml
//! manifest = "data/birds.csv"
//! run_dir = "runs/birds"
//! seed = 1
//!
//! [sampling]
//! mode = "balanced"
//! per_class = 3
//!
//! [providers.vqa]
//! base_url = "http://localhost:8000"
//! model = "blip2-flan-t5"
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentationSpec;
use crate::classifier::DEFAULT_ALPHA;
use crate::error::{Error, Result};
use crate::eval::sampling::{DEFAULT_PER_CLASS, DEFAULT_ZIPF_HI, DEFAULT_ZIPF_LO, DEFAULT_ZIPF_S};
use crate::providers::cache::{canonicalize, sha256_hex};
use crate::providers::{ProviderEndpoint, Role};
use crate::translate::templates::HowToVariant;
use crate::translate::{DEFAULT_AEK_QUERIES, DEFAULT_TEMPERATURE};

pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    #[default]
    Balanced,
    Zipf,
    /// Every pool image.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub mode: SamplingMode,
    pub per_class: usize,
    pub zipf_s: f64,
    pub zipf_lo: usize,
    pub zipf_hi: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            mode: SamplingMode::Balanced,
            per_class: DEFAULT_PER_CLASS,
            zipf_s: DEFAULT_ZIPF_S,
            zipf_lo: DEFAULT_ZIPF_LO,
            zipf_hi: DEFAULT_ZIPF_HI,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub alpha: Vec<f64>,
    pub k: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            alpha: (0..=10).map(|i| i as f64 / 10.0).collect(),
            k: vec![0, 1, 2, 5, 10, 15, 20],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_concurrency")]
    pub max_concurrency: usize,
    /// Environment variable holding a bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_env: Option<String>,
}

fn default_timeout() -> f64 {
    120.0
}

fn default_max_concurrency() -> usize {
    4
}

impl ProviderConfig {
    pub fn endpoint(&self, role: Role) -> Result<ProviderEndpoint> {
        let timeout = Duration::try_from_secs_f64(self.timeout_secs)
            .map_err(|e| Error::Config(format!("{}: timeout_secs: {e}", role.as_str())))?;
        let endpoint = ProviderEndpoint {
            timeout,
            max_concurrency: self.max_concurrency,
            ..ProviderEndpoint::new(role, &self.base_url, &self.model)
        };
        endpoint.validate()?;
        Ok(endpoint)
    }

    pub fn token(&self) -> Result<Option<String>> {
        match &self.token_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| Error::Config(format!("token variable {var} is not set"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub run_dir: PathBuf,
    pub seed: u64,
    pub alpha: f64,
    pub k_augment: usize,
    pub aek_queries: usize,
    pub temperature: f64,
    pub names_per_image: usize,
    /// Text fed to the text encoder per class, `{c}` marks the name. Bare
    /// names when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name_template: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates_dir: Option<PathBuf>,
    pub how_to: HowToVariant,
    /// Response cache; `FINER_CACHE_DIR` wins, then this, then `<run_dir>/cache`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    pub concurrency: usize,
    /// Scripted offline providers built from the manifest labels.
    pub mock: bool,
    pub sampling: SamplingConfig,
    pub augment: AugmentationSpec,
    pub sweep: SweepConfig,
    pub providers: BTreeMap<Role, ProviderConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::new(),
            run_dir: PathBuf::from("run"),
            seed: 0,
            alpha: DEFAULT_ALPHA,
            k_augment: crate::augment::DEFAULT_K,
            aek_queries: DEFAULT_AEK_QUERIES,
            temperature: DEFAULT_TEMPERATURE,
            names_per_image: 3,
            name_template: None,
            templates_dir: None,
            how_to: HowToVariant::default(),
            cache_dir: None,
            concurrency: 4,
            mock: false,
            sampling: SamplingConfig::default(),
            augment: AugmentationSpec::default(),
            sweep: SweepConfig::default(),
            providers: BTreeMap::new(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub k_augment: Option<usize>,
    pub seed: Option<u64>,
    pub mock: bool,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            config.rebase(base);
        }
        Ok(config)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.manifest);
        fix(&mut self.run_dir);
        if let Some(p) = &mut self.templates_dir {
            fix(p);
        }
        if let Some(p) = &mut self.cache_dir {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(a) = o.alpha {
            self.alpha = a;
        }
        if let Some(k) = o.k_augment {
            self.k_augment = k;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        self.mock |= o.mock;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.manifest.as_os_str().is_empty() {
            return bad("manifest path is required".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad(format!("temperature {} outside [0, 2]", self.temperature));
        }
        if self.aek_queries == 0 || self.names_per_image == 0 || self.concurrency == 0 {
            return bad("aek_queries, names_per_image and concurrency must be >= 1".into());
        }
        let s = &self.sampling;
        if s.mode == SamplingMode::Zipf && (s.zipf_lo == 0 || s.zipf_lo > s.zipf_hi || s.zipf_s <= 0.0) {
            return bad("zipf sampling needs 1 <= zipf_lo <= zipf_hi and zipf_s > 0".into());
        }
        if s.mode == SamplingMode::Balanced && s.per_class == 0 {
            return bad("per_class must be >= 1".into());
        }
        if self.sweep.alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad("sweep alpha values must lie in [0, 1]".into());
        }
        if let Some(t) = &self.name_template {
            if !t.contains("{c}") {
                return bad(format!("name_template {t:?} has no {{c}}"));
            }
        }
        self.augment.validate()?;
        if !self.mock {
            for role in [Role::Vqa, Role::Llm, Role::ImageEmbed] {
                if !self.providers.contains_key(&role) {
                    return bad(format!("providers.{} is not configured", role.as_str()));
                }
            }
        }
        for (role, p) in &self.providers {
            p.endpoint(*role)?;
        }
        Ok(())
    }

    /// Augmentation settings with the run-level K and seed applied.
    pub fn augmentation(&self) -> AugmentationSpec {
        AugmentationSpec {
            k: self.k_augment,
            seed: self.seed,
            ..self.augment.clone()
        }
    }

    /// Provider settings for `role`. Text embeddings fall back to the image
    /// embedder's settings since one joint model serves both.
    pub fn provider(&self, role: Role) -> Option<&ProviderConfig> {
        self.providers.get(&role).or(match role {
            Role::TextEmbed => self.providers.get(&Role::ImageEmbed),
            _ => None,
        })
    }

    /// Digest over every setting that can change a stage output. Paths to
    /// the run and cache directories, fan-out width and sweep grids are left
    /// out.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            for key in ["run_dir", "cache_dir", "concurrency", "sweep"] {
                map.remove(key);
            }
        }
        sha256_hex(canonicalize(&value).to_string().as_bytes())
    }

    /// Copy of this config for one seed of a multi-seed run.
    pub fn for_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            run_dir: self.run_dir.join(format!("seed-{seed}")),
            ..self.clone()
        }
    }
}

/// Parses `1..10` (inclusive), `3` or `1,4,7`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot parse seeds {text:?}"));
    let text = text.trim();
    if let Some((a, b)) = text.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect()
}
