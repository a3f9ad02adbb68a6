//! Vocabulary-free fine-grained visual recognition.
//!
//! A VQA model describes a handful of unlabelled images, an LLM reasons
//! class names out of those descriptions, and a joint text/image embedding
//! model turns the names plus the images into a zero-shot classifier.

pub mod augment;
pub mod classifier;
pub mod config;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod providers;
pub mod reason;
pub mod rundir;
pub mod synthetic;
pub mod translate;

pub use error::{Error, Result};
