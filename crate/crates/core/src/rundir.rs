//! Run directory: every stage output as a JSON file stamped with the
//! config digest, plus a lock file that keeps one command per directory.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttributeBundle, ClassWeights, ClassifierBundle, Embedding, Prediction};
use crate::reason::{ImageAssignment, ReasonerOutput};

pub const SUPERCATEGORIES: &str = "supercategories.json";
pub const ATTRIBUTES: &str = "attributes.json";
pub const DESCRIPTIONS: &str = "descriptions.json";
pub const CANDIDATES_RAW: &str = "candidates_raw.json";
pub const CANDIDATES_REFINED: &str = "candidates_refined.json";
pub const CLASSIFIER: &str = "classifier.json";
pub const PREDICTIONS: &str = "predictions.json";
pub const REPORT: &str = "report.json";
pub const PREDICTIONS_CSV: &str = "predictions.csv";
pub const SWEEP_ALPHA_CSV: &str = "sweep_alpha.csv";
pub const SWEEP_K_CSV: &str = "sweep_k.csv";
const LOCK: &str = ".lock";

/// A stage payload together with the digest of the config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_digest: String,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperCategories {
    /// Discovery image ids, sorted.
    pub discovery: Vec<String>,
    /// Images per class when sampled with a long tail, in rank order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zipf_counts: Vec<(String, usize)>,
    pub per_image: BTreeMap<String, String>,
    pub unique: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attributes {
    /// Attribute list per super-category, general attribute last.
    pub attributes: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Descriptions {
    pub bundles: Vec<AttributeBundle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCandidates {
    pub outputs: Vec<ReasonerOutput>,
    /// Deduplicated names, sorted.
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedCandidates {
    pub raw: Vec<String>,
    pub refined: Vec<String>,
    pub removed: Vec<String>,
    pub assignments: Vec<ImageAssignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredClass {
    pub name: String,
    /// Discovery images pseudo-labelled with this name.
    pub members: Vec<String>,
    /// Base64 little-endian f32 vectors.
    pub text: String,
    pub image: String,
    pub fused: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredClassifier {
    pub alpha: f64,
    pub k_augment: usize,
    pub dim: usize,
    pub classes: Vec<StoredClass>,
}

impl StoredClassifier {
    pub fn from_bundle(bundle: &ClassifierBundle, members: &BTreeMap<String, Vec<String>>) -> Self {
        Self {
            alpha: bundle.alpha,
            k_augment: bundle.k_augment,
            dim: bundle.dim().unwrap_or(0),
            classes: bundle
                .classes
                .iter()
                .map(|c| StoredClass {
                    name: c.name.clone(),
                    members: members.get(&c.name).cloned().unwrap_or_default(),
                    text: c.text.to_base64(),
                    image: c.image.to_base64(),
                    fused: c.fused.to_base64(),
                })
                .collect(),
        }
    }

    pub fn to_bundle(&self) -> Result<ClassifierBundle> {
        let classes = self
            .classes
            .iter()
            .map(|c| {
                let decode = |s: &str| -> Result<Embedding> {
                    let v = Embedding::from_base64(s)?;
                    if v.dim() != self.dim {
                        return Err(Error::DimMismatch {
                            left: self.dim,
                            right: v.dim(),
                        });
                    }
                    Ok(v)
                };
                Ok(ClassWeights {
                    name: c.name.clone(),
                    support: c.members.len(),
                    text: decode(&c.text)?,
                    image: decode(&c.image)?,
                    fused: decode(&c.fused)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassifierBundle {
            classes,
            alpha: self.alpha,
            k_augment: self.k_augment,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub predictions: Vec<Prediction>,
}

/// Holds the run-directory lock until dropped.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    digest: String,
    lock: PathBuf,
}

impl RunDir {
    /// Creates `root` if needed and takes its lock.
    pub fn open(root: &Path, digest: &str) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let lock = root.join(LOCK);
        let mut file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => Error::RunDir {
                    path: root.to_path_buf(),
                    message: format!(
                        "locked by another command (remove {} if no command is running)",
                        lock.display()
                    ),
                },
                _ => Error::io(&lock, e),
            })?;
        let _ = writeln!(file, "{}", std::process::id());
        Ok(Self {
            root: root.to_path_buf(),
            digest: digest.to_string(),
            lock,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).exists()
    }

    pub fn write<T: Serialize>(&self, name: &str, body: &T) -> Result<()> {
        let stamped = Stamped {
            config_digest: self.digest.clone(),
            body,
        };
        let mut text = serde_json::to_string_pretty(&stamped)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    /// Writes through a temporary file so readers never see partial output.
    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        write_atomic(&self.path(name), text.as_bytes())
    }

    /// Reads a stage file and rejects it unless it was produced under the
    /// current config.
    pub fn read<T: DeserializeOwned>(&self, name: &str) -> Result<T> {
        let stamped: Stamped<T> = read_stamped(&self.path(name))?;
        if stamped.config_digest != self.digest {
            return Err(Error::RunDir {
                path: self.path(name),
                message: format!(
                    "written under config {} but the current config is {}; re-run the earlier stages with the same settings",
                    short(&stamped.config_digest),
                    short(&self.digest)
                ),
            });
        }
        Ok(stamped.body)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.lock);
    }
}

fn short(digest: &str) -> &str {
    &digest[..digest.len().min(12)]
}

pub fn read_stamped<T: DeserializeOwned>(path: &Path) -> Result<Stamped<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::RunDir {
            path: path.to_path_buf(),
            message: "missing; run the earlier stage first".into(),
        },
        _ => Error::io(path, e),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::RunDir {
        path: path.to_path_buf(),
        message: format!("malformed: {e}"),
    })
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.{}.tmp", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
