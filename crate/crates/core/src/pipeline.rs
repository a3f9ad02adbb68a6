//! Stage orchestration over a run directory: discover, classify, evaluate,
//! and the multi-run summary.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::augment::augment_all;
use crate::classifier::{
    assemble_bundle, build_image_classifier, build_text_classifier, classify, classify_embedded,
    embed_images, mean_of_unit, refuse, PseudoLabeling,
};
use crate::config::{RunConfig, SamplingMode, CONFIG_FILE};
use crate::error::{Error, Result};
use crate::eval::manifest::{DatasetManifest, ManifestSplit};
use crate::eval::metrics::{clustering_accuracy, semantic_similarity};
use crate::eval::sampling::{sample_balanced, sample_zipf};
use crate::model::{ClassifierBundle, Embedding, EvalReport, ImageRecord, Prediction, Split};
use crate::providers::cache::{ResponseCache, CACHE_DIR_ENV};
use crate::providers::mock::MockWorld;
use crate::providers::{fan_out, Providers};
#[cfg(feature = "http")]
use crate::providers::{EmbedInput, Embedder, Role};
use crate::reason::{dedup, denoise, reason_names};
use crate::rundir::*;
use crate::translate::templates::Templates;
use crate::translate::{acquire_attributes, describe_image, identify_super_category, unique_super_categories};

/// Super-category the scripted mocks report for every image.
pub const MOCK_SUPER_CATEGORY: &str = "object";

type ClassCounts = Vec<(String, usize)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    Alpha,
    K,
}

/// Builds the providers a config asks for: scripted mocks from the manifest
/// labels, or HTTP clients behind the response cache.
pub fn build_providers(config: &RunConfig, manifest: &DatasetManifest, force: bool) -> Result<Providers> {
    if config.mock {
        let mut world = MockWorld::new(MOCK_SUPER_CATEGORY, config.seed);
        for e in &manifest.entries {
            if let Some(label) = &e.label {
                let path = manifest.resolve(&e.path);
                let bytes = std::fs::read(&path).map_err(|err| Error::io(&path, err))?;
                world.add_image(bytes, label.clone());
            }
        }
        return world.providers(config.concurrency);
    }
    let providers = http_providers(config)?;
    let dir = std::env::var_os(CACHE_DIR_ENV)
        .map(PathBuf::from)
        .or_else(|| config.cache_dir.clone())
        .unwrap_or_else(|| config.run_dir.join("cache"));
    let cache = ResponseCache::open(dir)?.refreshing(force);
    Ok(providers.cached(Arc::new(cache)))
}

#[cfg(feature = "http")]
fn http_providers(config: &RunConfig) -> Result<Providers> {
    use crate::providers::http::HttpProvider;
    let client = |role: Role| -> Result<Option<Arc<HttpProvider>>> {
        config
            .provider(role)
            .map(|p| Ok(Arc::new(HttpProvider::new(p.endpoint(role)?)?.with_bearer(p.token()?))))
            .transpose()
    };
    let required = |role: Role| {
        client(role)?.ok_or_else(|| Error::Config(format!("providers.{} is not configured", role.as_str())))
    };
    let sentence: Arc<dyn Embedder> = match client(Role::SentenceEmbed)? {
        Some(c) => c,
        None => Arc::new(Unconfigured(Role::SentenceEmbed)),
    };
    Ok(Providers {
        vqa: required(Role::Vqa)?,
        llm: required(Role::Llm)?,
        image_embed: required(Role::ImageEmbed)?,
        text_embed: required(Role::TextEmbed)?,
        sentence_embed: sentence,
        concurrency: config.concurrency,
    })
}

#[cfg(not(feature = "http"))]
fn http_providers(_config: &RunConfig) -> Result<Providers> {
    Err(Error::Config("built without the http feature; use mock providers".into()))
}

/// Stands in for an optional role nobody configured.
#[cfg(feature = "http")]
struct Unconfigured(Role);

#[cfg(feature = "http")]
impl Embedder for Unconfigured {
    fn model_name(&self) -> &str {
        "unconfigured"
    }

    fn embed(&self, _input: EmbedInput<'_>) -> Result<Embedding> {
        Err(Error::Config(format!("providers.{} is not configured", self.0.as_str())))
    }
}

pub struct Engine {
    pub config: RunConfig,
    pub manifest: DatasetManifest,
    pub providers: Providers,
    pub templates: Templates,
    run: RunDir,
}

impl Engine {
    pub fn open(config: RunConfig, force: bool) -> Result<Self> {
        config.validate()?;
        let manifest = DatasetManifest::load(&config.manifest)?;
        let providers = build_providers(&config, &manifest, force)?;
        Self::with_providers(config, manifest, providers)
    }

    pub fn with_providers(config: RunConfig, manifest: DatasetManifest, providers: Providers) -> Result<Self> {
        let templates = match &config.templates_dir {
            Some(dir) => Templates::load(dir, config.how_to)?,
            None => Templates::shipped(config.how_to),
        };
        let run = RunDir::open(&config.run_dir, &config.digest())?;
        run.write_text(CONFIG_FILE, &config.to_toml())?;
        Ok(Self {
            config,
            manifest,
            providers,
            templates,
            run,
        })
    }

    pub fn run_dir(&self) -> &RunDir {
        &self.run
    }

    /// Discovery records plus, for long-tail sampling, the per-class counts.
    fn sample_discovery(&self) -> Result<(Vec<ImageRecord>, ClassCounts)> {
        let s = &self.config.sampling;
        Ok(match s.mode {
            SamplingMode::Balanced => (sample_balanced(&self.manifest, s.per_class, self.config.seed)?, vec![]),
            SamplingMode::Zipf => {
                let z = sample_zipf(&self.manifest, self.config.seed, s.zipf_s, s.zipf_lo, s.zipf_hi)?;
                (z.records, z.counts)
            }
            SamplingMode::All => (self.manifest.pool_records(), vec![]),
        })
    }

    fn discovery_records(&self, ids: &[String]) -> Result<Vec<ImageRecord>> {
        let pool: HashMap<&str, _> = self.manifest.pool().map(|e| (e.path.as_str(), e)).collect();
        ids.iter()
            .map(|id| {
                pool.get(id.as_str())
                    .map(|e| self.manifest.record(e, Split::Discovery))
                    .ok_or_else(|| Error::Invalid(format!("discovery image {id} is not in the manifest pool")))
            })
            .collect()
    }

    /// Phases 1 and 2: describe the discovery images, reason names from the
    /// descriptions and drop names no image picks.
    pub fn discover(&self) -> Result<RefinedCandidates> {
        let c = &self.config;
        let p = &self.providers;
        let (records, zipf_counts) = self.sample_discovery().map_err(|e| e.in_stage("sample"))?;
        if records.is_empty() {
            return Err(Error::Invalid("discovery set is empty".into()).in_stage("sample"));
        }
        log::info!("discovery set: {} images", records.len());

        let translate = || -> Result<Vec<crate::model::AttributeBundle>> {
            let images = records
                .iter()
                .map(|r| Ok((r.id.clone(), r.load_bytes()?.into_owned())))
                .collect::<Result<Vec<_>>>()?;
            let supers = fan_out(&images, p.concurrency, |(_, b)| identify_super_category(p, &self.templates, b))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let unique = unique_super_categories(&supers)?;
            self.run.write(
                SUPERCATEGORIES,
                &SuperCategories {
                    discovery: images.iter().map(|i| i.0.clone()).collect(),
                    zipf_counts,
                    per_image: images.iter().map(|i| i.0.clone()).zip(supers.iter().cloned()).collect(),
                    unique: unique.clone(),
                },
            )?;
            let mut attributes = BTreeMap::new();
            for g in &unique {
                let attrs = acquire_attributes(p, &self.templates, g, c.aek_queries, c.temperature)?;
                attributes.insert(g.clone(), attrs);
            }
            self.run.write(ATTRIBUTES, &Attributes { attributes: attributes.clone() })?;
            let bundles = images
                .iter()
                .zip(&supers)
                .map(|((id, bytes), g)| describe_image(p, &self.templates, id, bytes, g, &attributes[g]))
                .collect::<Result<Vec<_>>>()?;
            self.run.write(DESCRIPTIONS, &Descriptions { bundles: bundles.clone() })?;
            Ok(bundles)
        };
        let bundles = translate().map_err(|e| e.in_stage("translate"))?;

        let outputs = reason_names(p, &self.templates, &bundles, c.names_per_image, c.temperature)
            .map_err(|e| e.in_stage("reason"))?;
        let names = dedup(outputs.iter().flat_map(|o| o.names.iter().map(String::as_str)))
            .map_err(|e| e.in_stage("reason"))?;
        self.run.write(CANDIDATES_RAW, &RawCandidates { outputs, names: names.clone() })?;

        let refine = || -> Result<RefinedCandidates> {
            let embedded = embed_images(p, &records)?;
            let d = denoise(p, &names, &embedded, c.name_template.as_deref())?;
            let out = RefinedCandidates {
                raw: d.candidates.raw,
                refined: d.candidates.refined,
                removed: d.candidates.removed,
                assignments: d.assignments,
            };
            self.run.write(CANDIDATES_REFINED, &out)?;
            Ok(out)
        };
        refine().map_err(|e| e.in_stage("denoise"))
    }

    /// Phase 3: build the fused classifier and label the test split.
    pub fn classify(&self) -> Result<Vec<Prediction>> {
        let inner = || -> Result<Vec<Prediction>> {
            let c = &self.config;
            let p = &self.providers;
            let sc: SuperCategories = self.run.read(SUPERCATEGORIES)?;
            let refined: RefinedCandidates = self.run.read(CANDIDATES_REFINED)?;
            let discovery = self.discovery_records(&sc.discovery)?;
            // Images keep the nearest-name assignment from denoising: the
            // winner over all names always survives into the refined set.
            let labeling = PseudoLabeling::from_assignments(refined.assignments.clone());
            let text = build_text_classifier(p, &refined.refined, c.name_template.as_deref())?;
            let vision = build_image_classifier(p, &refined.refined, &labeling, &discovery, &c.augmentation())?;
            let vision: Vec<Embedding> = vision.into_iter().map(|v| v.vector).collect();
            let bundle = assemble_bundle(&refined.refined, &text, &vision, &labeling.support, c.alpha, c.k_augment)?;
            let members = refined
                .refined
                .iter()
                .map(|n| (n.clone(), labeling.members(n).into_iter().map(String::from).collect()))
                .collect();
            self.run.write(CLASSIFIER, &StoredClassifier::from_bundle(&bundle, &members))?;
            let predictions = classify(p, &self.manifest.test_records(), &bundle)?;
            self.run.write(
                PREDICTIONS,
                &Predictions {
                    predictions: predictions.clone(),
                },
            )?;
            Ok(predictions)
        };
        inner().map_err(|e| e.in_stage("classify"))
    }

    fn truths(&self) -> HashMap<String, String> {
        self.manifest
            .entries
            .iter()
            .filter(|e| e.split == ManifestSplit::Test)
            .filter_map(|e| Some((e.path.clone(), e.label.clone()?)))
            .collect()
    }

    fn score(&self, predictions: &[Prediction], truths: &HashMap<String, String>) -> Result<(f64, f64)> {
        let cs = clustering_accuracy(predictions, truths)?;
        let sacc = semantic_similarity(&self.providers, predictions, truths)?;
        Ok((cs.cacc, sacc))
    }

    /// Scores the predictions, writes `report.json` and `predictions.csv`,
    /// and optionally a sensitivity sweep.
    pub fn evaluate(&self, sweep: Option<Sweep>) -> Result<EvalReport> {
        let inner = || -> Result<EvalReport> {
            let preds: Predictions = self.run.read(PREDICTIONS)?;
            let stored: StoredClassifier = self.run.read(CLASSIFIER)?;
            let truths = self.truths();
            let cs = clustering_accuracy(&preds.predictions, &truths)?;
            let sacc = semantic_similarity(&self.providers, &preds.predictions, &truths)?;
            let report = EvalReport {
                cacc: cs.cacc,
                sacc,
                matching: cs.matching,
                n_test: preds.predictions.len(),
                config_digest: self.run.digest().to_string(),
            };
            let mut text = serde_json::to_string_pretty(&report)?;
            text.push('\n');
            self.run.write_text(REPORT, &text)?;
            self.run.write_text(PREDICTIONS_CSV, &predictions_csv(&preds.predictions, &truths)?)?;
            match sweep {
                Some(Sweep::Alpha) => self.sweep_alpha(&stored, &truths)?,
                Some(Sweep::K) => self.sweep_k(&stored, &truths)?,
                None => {}
            }
            Ok(report)
        };
        inner().map_err(|e| e.in_stage("evaluate"))
    }

    fn test_embeddings(&self) -> Result<Vec<(String, Embedding)>> {
        embed_images(&self.providers, &self.manifest.test_records())
    }

    fn sweep_alpha(&self, stored: &StoredClassifier, truths: &HashMap<String, String>) -> Result<()> {
        let bundle = stored.to_bundle()?;
        let test = self.test_embeddings()?;
        let mut rows = vec![("alpha".to_string(), "cacc".to_string(), "sacc".to_string())];
        for &alpha in &self.config.sweep.alpha {
            let (cacc, sacc) = self.score(&classify_embedded(&test, &refuse(&bundle, alpha)?)?, truths)?;
            rows.push((alpha.to_string(), cacc.to_string(), sacc.to_string()));
        }
        self.run.write_text(SWEEP_ALPHA_CSV, &to_csv(&rows)?)
    }

    fn sweep_k(&self, stored: &StoredClassifier, truths: &HashMap<String, String>) -> Result<()> {
        let p = &self.providers;
        let max_k = self.config.sweep.k.iter().copied().max().unwrap_or(0);
        let spec = crate::augment::AugmentationSpec {
            k: max_k,
            ..self.config.augmentation()
        };
        let members: Vec<String> = stored.classes.iter().flat_map(|c| c.members.clone()).collect();
        let records = self.discovery_records(&members)?;
        // Augmented copies for index i do not depend on K, so the largest
        // grid point covers every smaller one as a prefix.
        let samples: Vec<Vec<Embedding>> = fan_out(&records, p.concurrency, |r| -> Result<Vec<Embedding>> {
            let bytes = r.load_bytes()?;
            let mut out = vec![p.embed_image(&bytes)?];
            for aug in augment_all(&bytes, &r.id, &spec)? {
                out.push(p.embed_image(&aug)?);
            }
            Ok(out)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let by_id: HashMap<&str, &Vec<Embedding>> = members.iter().map(String::as_str).zip(&samples).collect();
        let base = stored.to_bundle()?;
        let names: Vec<String> = base.class_names().map(String::from).collect();
        let text: Vec<Embedding> = base.classes.iter().map(|c| c.text.clone()).collect();
        let support = base.classes.iter().map(|c| (c.name.clone(), c.support)).collect();
        let test = self.test_embeddings()?;
        let mut rows = vec![("k".to_string(), "cacc".to_string(), "sacc".to_string())];
        for &k in &self.config.sweep.k {
            let vision = stored
                .classes
                .iter()
                .map(|c| {
                    let terms: Vec<Embedding> = c
                        .members
                        .iter()
                        .flat_map(|m| by_id[m.as_str()][..=k].iter().cloned())
                        .collect();
                    mean_of_unit(&terms)
                })
                .collect::<Result<Vec<_>>>()?;
            let bundle = assemble_bundle(&names, &text, &vision, &support, self.config.alpha, k)?;
            let (cacc, sacc) = self.score(&classify_embedded(&test, &bundle)?, truths)?;
            rows.push((k.to_string(), cacc.to_string(), sacc.to_string()));
        }
        self.run.write_text(SWEEP_K_CSV, &to_csv(&rows)?)
    }

    /// Bundle as stored on disk.
    pub fn stored_classifier(&self) -> Result<ClassifierBundle> {
        self.run.read::<StoredClassifier>(CLASSIFIER)?.to_bundle()
    }
}

fn to_csv(rows: &[(String, String, String)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (a, b, c) in rows {
        w.write_record([a, b, c]).map_err(|e| Error::Invalid(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

pub fn predictions_csv(predictions: &[Prediction], truths: &HashMap<String, String>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Invalid(e.to_string());
    w.write_record(["image_id", "predicted_name", "true_name", "score"]).map_err(err)?;
    for p in predictions {
        let truth = truths.get(&p.image_id).map(String::as_str).unwrap_or("");
        w.write_record([p.image_id.as_str(), &p.predicted_name, truth, &p.score.to_string()])
            .map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

/// One report in a summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub cacc: f64,
    pub sacc: f64,
    pub n_test: usize,
}

fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: EvalReport = serde_json::from_str(&text).map_err(|e| Error::RunDir {
        path: path.to_path_buf(),
        message: format!("malformed report: {e}"),
    })?;
    if !report.cacc.is_finite() || !report.sacc.is_finite() {
        return Err(Error::RunDir {
            path: path.to_path_buf(),
            message: "malformed report: non-finite metric".into(),
        });
    }
    Ok(report)
}

/// Reports of a single run directory, or of its `seed-N` children.
pub fn collect_reports(run_dir: &Path) -> Result<Vec<ReportRow>> {
    let row = |run: String, r: EvalReport| ReportRow {
        run,
        cacc: r.cacc,
        sacc: r.sacc,
        n_test: r.n_test,
    };
    let single = run_dir.join(REPORT);
    if single.exists() {
        return Ok(vec![row(".".into(), read_report(&single)?)]);
    }
    let mut seeds: Vec<(u64, PathBuf)> = std::fs::read_dir(run_dir)
        .map_err(|e| Error::RunDir {
            path: run_dir.to_path_buf(),
            message: format!("cannot read run directory: {e}"),
        })?
        .filter_map(|e| {
            let e = e.ok()?;
            let seed = e.file_name().to_str()?.strip_prefix("seed-")?.parse().ok()?;
            let report = e.path().join(REPORT);
            report.exists().then_some((seed, report))
        })
        .collect();
    seeds.sort();
    if seeds.is_empty() {
        return Err(Error::RunDir {
            path: run_dir.to_path_buf(),
            message: format!("no {REPORT} here or in seed-* subdirectories; run evaluate first"),
        });
    }
    seeds
        .into_iter()
        .map(|(s, p)| Ok(row(format!("seed-{s}"), read_report(&p)?)))
        .collect()
}

fn mean_row(rows: &[ReportRow]) -> Option<ReportRow> {
    (rows.len() > 1).then(|| {
        let n = rows.len() as f64;
        ReportRow {
            run: "mean".into(),
            cacc: rows.iter().map(|r| r.cacc).sum::<f64>() / n,
            sacc: rows.iter().map(|r| r.sacc).sum::<f64>() / n,
            n_test: rows.iter().map(|r| r.n_test).sum::<usize>() / rows.len(),
        }
    })
}

fn pct(x: f64) -> String {
    format!("{:.1}", x * 100.0)
}

/// Metrics as percentages with one decimal, plus a mean row over seeds.
pub fn summary_markdown(rows: &[ReportRow]) -> String {
    let mut out = String::from("| run | cACC | sACC | n_test |\n|---|---:|---:|---:|\n");
    for r in rows.iter().cloned().chain(mean_row(rows)) {
        out.push_str(&format!("| {} | {} | {} | {} |\n", r.run, pct(r.cacc), pct(r.sacc), r.n_test));
    }
    out
}

pub fn summary_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("run,cacc,sacc,n_test\n");
    for r in rows.iter().cloned().chain(mean_row(rows)) {
        out.push_str(&format!("{},{},{},{}\n", r.run, pct(r.cacc), pct(r.sacc), r.n_test));
    }
    out
}

/// Writes `summary.md` and `summary.csv` next to the reports and returns
/// the Markdown table.
pub fn report(run_dir: &Path) -> Result<String> {
    let rows = collect_reports(run_dir)?;
    let md = summary_markdown(&rows);
    write_atomic(&run_dir.join("summary.md"), md.as_bytes())?;
    write_atomic(&run_dir.join("summary.csv"), summary_csv(&rows).as_bytes())?;
    Ok(md)
}
