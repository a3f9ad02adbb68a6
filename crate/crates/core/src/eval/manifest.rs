//! Dataset manifests: CSV or JSONL rows of `(path, label, split)`.
//!
//! Paths are resolved relative to the manifest file. Split values `train`
//! and `discovery` both mark the pool discovery images are drawn from.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImageRecord, ImageSource, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestSplit {
    #[serde(alias = "discovery")]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    #[serde(default, deserialize_with = "empty_as_none")]
    pub label: Option<String>,
    pub split: ManifestSplit,
}

fn empty_as_none<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Option<String>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    Ok(s.map(|s| s.trim().to_string()).filter(|s| !s.is_empty()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let err = |message: String| Error::Manifest {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(format!("cannot read: {e}")))?;
        let is_jsonl = path.extension().is_some_and(|e| e == "jsonl")
            || text.trim_start().starts_with('{');
        let entries = if is_jsonl {
            text.lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    serde_json::from_str::<ManifestEntry>(l).map_err(|e| err(format!("line {}: {e}", i + 1)))
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_reader(text.as_bytes())
                .deserialize::<ManifestEntry>()
                .enumerate()
                .map(|(i, r)| r.map_err(|e| err(format!("row {}: {e}", i + 1))))
                .collect::<Result<Vec<_>>>()?
        };
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let manifest = Self { name, root, entries };
        manifest.check().map_err(err)?;
        Ok(manifest)
    }

    fn check(&self) -> std::result::Result<(), String> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.path.as_str()) {
                return Err(format!("duplicate entry {}", e.path));
            }
            if e.split == ManifestSplit::Test && e.label.is_none() {
                return Err(format!("test entry {} has no label", e.path));
            }
            if !self.resolve(&e.path).exists() {
                return Err(format!("image {} does not exist", e.path));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        self.root.join(path)
    }

    /// Sorted set of labels across all splits.
    pub fn class_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter_map(|e| e.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn pool(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.split == ManifestSplit::Train)
    }

    pub fn record(&self, entry: &ManifestEntry, split: Split) -> ImageRecord {
        ImageRecord {
            id: entry.path.clone(),
            source: ImageSource::Path(self.resolve(&entry.path)),
            ground_truth: entry.label.clone(),
            split,
        }
    }

    /// Test split, sorted by id.
    pub fn test_records(&self) -> Vec<ImageRecord> {
        let mut out: Vec<ImageRecord> = self
            .entries
            .iter()
            .filter(|e| e.split == ManifestSplit::Test)
            .map(|e| self.record(e, Split::Test))
            .collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    /// Whole pool as the discovery set, sorted by id.
    pub fn pool_records(&self) -> Vec<ImageRecord> {
        let mut out: Vec<ImageRecord> = self.pool().map(|e| self.record(e, Split::Discovery)).collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, content).unwrap();
        p
    }

    #[test]
    fn csv_and_jsonl_agree() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.png", "");
        write(dir.path(), "b.png", "");
        let csv = write(dir.path(), "m.csv", "path,label,split\na.png,Whippet,train\nb.png,Whippet,test\n");
        let jsonl = write(
            dir.path(),
            "m.jsonl",
            "{\"path\":\"a.png\",\"label\":\"Whippet\",\"split\":\"discovery\"}\n{\"path\":\"b.png\",\"label\":\"Whippet\",\"split\":\"test\"}\n",
        );
        let a = DatasetManifest::load(&csv).unwrap();
        let b = DatasetManifest::load(&jsonl).unwrap();
        assert_eq!(a.entries, b.entries);
        assert_eq!(a.class_names(), vec!["Whippet"]);
        assert_eq!(a.test_records()[0].id, "b.png");
    }

    #[test]
    fn unlabelled_pool_entries_are_allowed() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.png", "");
        let m = write(dir.path(), "m.csv", "path,label,split\na.png,,train\n");
        let m = DatasetManifest::load(&m).unwrap();
        assert_eq!(m.entries[0].label, None);
    }

    #[test]
    fn errors_name_the_problem() {
        let dir = tempfile::tempdir().unwrap();
        let missing = DatasetManifest::load(&dir.path().join("nope.csv")).unwrap_err();
        assert!(missing.to_string().contains("nope.csv"));
        assert!(missing.is_usage());

        let m = write(dir.path(), "m.csv", "path,label,split\nghost.png,X,train\n");
        assert!(DatasetManifest::load(&m).unwrap_err().to_string().contains("ghost.png"));

        write(dir.path(), "a.png", "");
        let m = write(dir.path(), "t.csv", "path,label,split\na.png,,test\n");
        assert!(DatasetManifest::load(&m).unwrap_err().to_string().contains("no label"));
    }
}
