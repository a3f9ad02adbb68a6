//! Scoring and dataset handling.

pub mod assignment;
pub mod manifest;
pub mod metrics;
pub mod sampling;

pub use assignment::{optimal_assignment, Assignment};
pub use manifest::{DatasetManifest, ManifestEntry, ManifestSplit};
pub use metrics::{clustering_accuracy, semantic_similarity, semantic_similarity_with, ClusteringScore};
pub use sampling::{sample_balanced, sample_zipf, zipf_counts, ZipfSample};
