//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use finer_core::augment::{augment_all, AugmentationSpec};
use finer_core::classifier::{
    assemble_bundle, build_image_classifier, build_text_classifier, classify_embedded, fuse, PseudoLabeling,
};
use finer_core::config::RunConfig;
use finer_core::eval::{
    clustering_accuracy, optimal_assignment, sample_balanced, sample_zipf, DatasetManifest, ManifestEntry,
    ManifestSplit,
};
use finer_core::model::{
    AttributeBundle, AttributeDescription, ClassWeights, ClassifierBundle, Embedding, ImageRecord, Prediction, Split,
    GENERAL_ATTRIBUTE,
};
use finer_core::pipeline::Engine;
use finer_core::providers::mock::{hashed_providers, CallCounter, MockEmbedder, MockLlm};
use finer_core::reason::{dedup, denoise_embedded, reason_names, ImageAssignment};
use finer_core::rundir;
use finer_core::synthetic::{toy_image, write_toy_dataset, ToySpec, TOY_CLASSES};
use finer_core::translate::templates::Templates;
use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, budget: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < budget, || format!("took {took:.2?}, budget {budget:?}"))
}

fn e(v: Vec<f64>) -> Embedding {
    Embedding::new(v).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    e((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn cos(a: &Embedding, b: &Embedding) -> f64 {
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    let na = a.values().iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

// --- mock end to end ------------------------------------------------------

const STAGE_FILES: [&str; 10] = [
    "config.toml",
    rundir::SUPERCATEGORIES,
    rundir::ATTRIBUTES,
    rundir::DESCRIPTIONS,
    rundir::CANDIDATES_RAW,
    rundir::CANDIDATES_REFINED,
    rundir::CLASSIFIER,
    rundir::PREDICTIONS,
    rundir::REPORT,
    rundir::PREDICTIONS_CSV,
];

fn mock_end_to_end() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = ToySpec::default();
    let manifest = write_toy_dataset(&dir.path().join("data"), &spec).map_err(|e| e.to_string())?;
    let config = RunConfig {
        manifest,
        run_dir: dir.path().join("run"),
        mock: true,
        ..Default::default()
    };
    let mut expected: Vec<String> = TOY_CLASSES.iter().map(|c| c.0.to_string()).collect();
    expected.sort();
    let mut expected_raw: Vec<String> = TOY_CLASSES
        .iter()
        .flat_map(|c| [c.0.to_string(), format!("Greater {}", c.0), format!("{} Hybrid", c.0)])
        .collect();
    expected_raw.sort_by_key(|n| n.to_lowercase());

    let run = |config: &RunConfig| -> Result<Vec<Vec<u8>>, String> {
        let engine = Engine::open(config.clone(), false).map_err(|e| e.to_string())?;
        let refined = engine.discover().map_err(|e| e.to_string())?;
        ensure(refined.refined == expected, || format!("refined {:?}", refined.refined))?;
        let mut raw = refined.raw.clone();
        raw.sort_by_key(|n| n.to_lowercase());
        ensure(raw == expected_raw, || format!("raw {:?}", refined.raw))?;
        engine.classify().map_err(|e| e.to_string())?;
        let report = engine.evaluate(None).map_err(|e| e.to_string())?;
        ensure(report.cacc == 1.0, || format!("cACC {}", report.cacc))?;
        ensure((report.sacc - 1.0).abs() <= 1e-12, || format!("sACC {}", report.sacc))?;
        ensure(report.n_test == 20, || format!("n_test {}", report.n_test))?;
        STAGE_FILES
            .iter()
            .map(|f| std::fs::read(engine.run_dir().path(f)).map_err(|e| format!("{f}: {e}")))
            .collect()
    };
    let first = run(&config)?;
    std::fs::remove_dir_all(&config.run_dir).map_err(|e| e.to_string())?;
    let second = run(&config)?;
    for (name, (a, b)) in STAGE_FILES.iter().zip(first.iter().zip(&second)) {
        ensure(a == b, || format!("{name} differs between runs"))?;
    }
    within(start, Duration::from_secs(10))?;
    Ok(format!("{} classes recovered, {} files identical", expected.len(), STAGE_FILES.len()))
}

// --- assignment -----------------------------------------------------------

/// Best permutation of the zero-padded square matrix; the first maximum in
/// lexicographic order wins.
fn brute_assignment(w: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let (rows, cols) = (w.len(), w[0].len());
    let n = rows.max(cols);
    let at = |i: usize, j: usize| if i < rows && j < cols { w[i][j] } else { 0.0 };
    let mut best: Option<(Vec<usize>, f64)> = None;
    for perm in (0..n).permutations(n) {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| at(i, j)).sum();
        if best.as_ref().is_none_or(|b| total > b.1) {
            best = Some((perm, total));
        }
    }
    best.unwrap()
}

fn assignment_oracle() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..500 {
        let rows = rng.random_range(1..=6);
        let cols = rng.random_range(1..=6);
        // even cases use small integers so optimal ties are common
        let w: Vec<Vec<f64>> = (0..rows)
            .map(|_| {
                (0..cols)
                    .map(|_| {
                        if case % 2 == 0 {
                            rng.random_range(0..4) as f64
                        } else {
                            rng.random_range(0.0..10.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let got = optimal_assignment(&w).map_err(|e| e.to_string())?;
        let (perm, total) = brute_assignment(&w);
        ensure(got.total == total, || format!("case {case}: total {} vs {total} on {w:?}", got.total))?;
        ensure(got.permutation == perm, || {
            format!("case {case}: permutation {:?} vs {perm:?} on {w:?}", got.permutation)
        })?;
    }
    within(start, Duration::from_secs(5))?;
    Ok("500 matrices".into())
}

// --- clustering accuracy ----------------------------------------------------

fn best_matching(counts: &[Vec<usize>], row: usize, used: &mut Vec<bool>) -> usize {
    if row == counts.len() {
        return 0;
    }
    let mut best = best_matching(counts, row + 1, used);
    for c in 0..used.len() {
        if !used[c] {
            used[c] = true;
            best = best.max(counts[row][c] + best_matching(counts, row + 1, used));
            used[c] = false;
        }
    }
    best
}

fn cacc_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..200 {
        let n_pred = rng.random_range(1..=6);
        let n_true = rng.random_range(1..=6);
        let n = rng.random_range(1..=30);
        let mut counts = vec![vec![0usize; n_true]; n_pred];
        let mut predictions = Vec::new();
        let mut truths = HashMap::new();
        for i in 0..n {
            let (p, t) = (rng.random_range(0..n_pred), rng.random_range(0..n_true));
            counts[p][t] += 1;
            let id = format!("img{i:02}");
            predictions.push(Prediction {
                image_id: id.clone(),
                predicted_name: format!("p{p}"),
                score: 0.0,
                runner_ups: vec![],
            });
            truths.insert(id, format!("t{t}"));
        }
        let got = clustering_accuracy(&predictions, &truths).map_err(|e| e.to_string())?;
        let best = best_matching(&counts, 0, &mut vec![false; n_true]);
        let want = best as f64 / n as f64;
        ensure(got.cacc == want, || format!("case {case}: {} vs {want}", got.cacc))?;
    }
    Ok("200 instances".into())
}

// --- denoise ----------------------------------------------------------------

fn first_argmax(image: &Embedding, names: &[Embedding]) -> usize {
    let mut best = 0;
    for (i, v) in names.iter().enumerate() {
        if cos(image, v) > cos(image, &names[best]) {
            best = i;
        }
    }
    best
}

fn denoise_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut removed_total = 0;
    for case in 0..300 {
        let dim = rng.random_range(2..=8);
        let n_names = rng.random_range(1..=12);
        let n_images = rng.random_range(1..=15);
        let names: Vec<String> = (0..n_names).map(|i| format!("name {i}")).collect();
        let mut vectors: Vec<Embedding> = Vec::new();
        for _ in 0..n_names {
            // occasional duplicates exercise the earlier-name tie rule
            if !vectors.is_empty() && rng.random_bool(0.15) {
                let j = rng.random_range(0..vectors.len());
                vectors.push(vectors[j].clone());
            } else {
                vectors.push(random_vec(&mut rng, dim));
            }
        }
        let images: Vec<(String, Embedding)> =
            (0..n_images).map(|i| (format!("i{i}"), random_vec(&mut rng, dim))).collect();
        let got = denoise_embedded(&names, &vectors, &images).map_err(|e| e.to_string())?;
        let chosen: BTreeSet<usize> = images.iter().map(|(_, v)| first_argmax(v, &vectors)).collect();
        let want: Vec<String> = chosen.iter().map(|&i| names[i].clone()).collect();
        ensure(got.candidates.refined == want, || {
            format!("case {case}: {:?} vs {want:?}", got.candidates.refined)
        })?;
        removed_total += got.candidates.removed.len();
        let kept: Vec<Embedding> = chosen.iter().map(|&i| vectors[i].clone()).collect();
        let again = denoise_embedded(&got.candidates.refined, &kept, &images).map_err(|e| e.to_string())?;
        ensure(again.candidates.removed.is_empty(), || {
            format!("case {case}: second pass removed {:?}", again.candidates.removed)
        })?;
    }
    Ok(format!("300 instances, {removed_total} names removed"))
}

// --- classifier math --------------------------------------------------------

fn classifier_math() -> Check {
    // text weights are unit vectors
    let providers = hashed_providers(5, 16);
    let names: Vec<String> = (0..8).map(|i| format!("Bird {i}")).collect();
    let text = build_text_classifier(&providers, &names, Some("a photo of a {c}.")).map_err(|e| e.to_string())?;
    for (n, t) in names.iter().zip(&text) {
        ensure((t.norm() - 1.0).abs() <= 1e-6, || format!("{n}: norm {}", t.norm()))?;
    }

    // vision weights average exactly U_c (K + 1) embeddings
    let counter = CallCounter::default();
    let embedder = Arc::new(MockEmbedder::histogram(0).counted(counter.clone()));
    let providers = finer_core::providers::Providers {
        image_embed: embedder,
        ..hashed_providers(0, 4)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let classes: Vec<String> = TOY_CLASSES.iter().take(3).map(|c| c.0.to_string()).collect();
    let support = [2usize, 1, 4];
    let mut images = Vec::new();
    let mut assignments = Vec::new();
    for (ci, (&(_, color), &u)) in TOY_CLASSES.iter().zip(&support).enumerate() {
        for m in 0..u {
            let id = format!("c{ci}_m{m}.png");
            let bytes = finer_core::augment::encode_png(&toy_image(color, 16, 10, &mut rng));
            images.push(ImageRecord::from_bytes(id.clone(), bytes, Split::Discovery));
            assignments.push(ImageAssignment {
                image_id: id,
                name: classes[ci].clone(),
                score: 1.0,
            });
        }
    }
    let labeling = PseudoLabeling::from_assignments(assignments);
    for k in [0usize, 3] {
        let spec = AugmentationSpec {
            k,
            ..Default::default()
        };
        let before = counter.get();
        let weights =
            build_image_classifier(&providers, &classes, &labeling, &images, &spec).map_err(|e| e.to_string())?;
        let calls = counter.get() - before;
        let want: usize = support.iter().map(|u| u * (k + 1)).sum();
        ensure(calls == want, || format!("K={k}: {calls} embeddings, expected {want}"))?;
        for (ci, w) in weights.iter().enumerate() {
            ensure(w.terms == support[ci] * (k + 1), || format!("K={k} class {ci}: {} terms", w.terms))?;
            // independent mean of unit vectors over originals and their copies
            let mut acc = vec![0.0; w.vector.dim()];
            let mut count = 0;
            for r in images.iter().filter(|r| labeling.members(&classes[ci]).contains(&r.id.as_str())) {
                let bytes = r.load_bytes().map_err(|e| e.to_string())?.to_vec();
                let mut samples = vec![bytes.clone()];
                samples.extend(augment_all(&bytes, &r.id, &spec).map_err(|e| e.to_string())?);
                for s in samples {
                    let v = finer_core::providers::mock::color_histogram(&s).ok_or("not an image")?;
                    let norm = v.norm();
                    for (a, x) in acc.iter_mut().zip(v.values()) {
                        *a += x / norm;
                    }
                    count += 1;
                }
            }
            let diff = acc
                .iter()
                .zip(w.vector.values())
                .map(|(a, b)| (a / count as f64 - b).abs())
                .fold(0.0, f64::max);
            ensure(diff <= 1e-12, || format!("K={k} class {ci}: mean differs by {diff}"))?;
        }
    }

    // alpha = 1 and 0 reproduce single-modality predictions; scaling is harmless
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for case in 0..50 {
        let dim = 12;
        let n_classes = rng.random_range(2..=8);
        let names: Vec<String> = (0..n_classes).map(|i| format!("c{i}")).collect();
        let text: Vec<Embedding> = (0..n_classes).map(|_| random_vec(&mut rng, dim)).collect();
        let vision: Vec<Embedding> = (0..n_classes).map(|_| random_vec(&mut rng, dim)).collect();
        let test: Vec<(String, Embedding)> =
            (0..20).map(|i| (format!("t{i:02}"), random_vec(&mut rng, dim))).collect();
        let single = |weights: &[Embedding]| ClassifierBundle {
            classes: names
                .iter()
                .zip(weights)
                .map(|(n, w)| ClassWeights {
                    name: n.clone(),
                    support: 1,
                    text: w.clone(),
                    image: w.clone(),
                    fused: w.clone(),
                })
                .collect(),
            alpha: 0.0,
            k_augment: 0,
        };
        let support = BTreeMap::new();
        for (alpha, reference) in [(1.0, &text), (0.0, &vision)] {
            let fused = assemble_bundle(&names, &text, &vision, &support, alpha, 0).map_err(|e| e.to_string())?;
            let a = classify_embedded(&test, &fused).map_err(|e| e.to_string())?;
            let b = classify_embedded(&test, &single(reference)).map_err(|e| e.to_string())?;
            for (x, y) in a.iter().zip(&b) {
                ensure(x.predicted_name == y.predicted_name && x.score.to_bits() == y.score.to_bits(), || {
                    format!("case {case} alpha {alpha}: {x:?} vs {y:?}")
                })?;
            }
        }
        let bundle = assemble_bundle(&names, &text, &vision, &support, 0.7, 0).map_err(|e| e.to_string())?;
        let base = classify_embedded(&test, &bundle).map_err(|e| e.to_string())?;
        let mut scaled = bundle.clone();
        let c = rng.random_range(0..n_classes);
        let factor = rng.random_range(0.01..100.0);
        scaled.classes[c].fused = scaled.classes[c].fused.scaled(factor);
        let after = classify_embedded(&test, &scaled).map_err(|e| e.to_string())?;
        for (x, y) in base.iter().zip(&after) {
            ensure(x.predicted_name == y.predicted_name, || {
                format!("case {case}: scaling class {c} by {factor} changed {}", x.image_id)
            })?;
        }
        ensure(fuse(&text[0], &vision[0], 1.5).is_err(), || "alpha 1.5 accepted".into())?;
    }
    Ok("norms, embedding counts, alpha endpoints, scaling".into())
}

// --- samplers -------------------------------------------------------------

fn manifest(classes: usize, per_class: usize) -> DatasetManifest {
    let mut entries = Vec::new();
    for c in 0..classes {
        for i in 0..per_class {
            entries.push(ManifestEntry {
                path: format!("c{c:03}/{i:02}.jpg"),
                label: Some(format!("class {c:03}")),
                split: ManifestSplit::Train,
            });
        }
    }
    DatasetManifest {
        name: "synthetic".into(),
        root: "/nonexistent".into(),
        entries,
    }
}

fn samplers() -> Check {
    let m = manifest(200, 12);
    let balanced = sample_balanced(&m, 3, 7).map_err(|e| e.to_string())?;
    ensure(balanced.len() == 600, || format!("balanced gave {}", balanced.len()))?;
    let mut per_class: BTreeMap<String, usize> = BTreeMap::new();
    for r in &balanced {
        *per_class.entry(r.ground_truth.clone().unwrap_or_default()).or_default() += 1;
    }
    ensure(per_class.len() == 200 && per_class.values().all(|&n| n == 3), || {
        "balanced sample is not 3 per class".into()
    })?;
    let again = sample_balanced(&m, 3, 7).map_err(|e| e.to_string())?;
    ensure(
        balanced.iter().map(|r| &r.id).eq(again.iter().map(|r| &r.id)),
        || "balanced sample not reproducible".into(),
    )?;

    let mut total = 0;
    for seed in 0..5 {
        let z = sample_zipf(&m, seed, 2.0, 1, 10).map_err(|e| e.to_string())?;
        let counts: Vec<usize> = z.counts.iter().map(|c| c.1).collect();
        ensure(counts.len() == 200, || format!("{} ranked classes", counts.len()))?;
        ensure(counts.iter().all(|c| (1..=10).contains(c)), || format!("counts {counts:?}"))?;
        ensure(counts.windows(2).all(|w| w[0] >= w[1]), || format!("not non-increasing: {counts:?}"))?;
        ensure(z.records.len() == counts.iter().sum::<usize>(), || "records do not match counts".into())?;
        let z2 = sample_zipf(&m, seed, 2.0, 1, 10).map_err(|e| e.to_string())?;
        ensure(z.counts == z2.counts, || "zipf ranking not reproducible".into())?;
        ensure(
            z.records.iter().map(|r| &r.id).eq(z2.records.iter().map(|r| &r.id)),
            || "zipf records not reproducible".into(),
        )?;
        total = z.records.len();
    }
    Ok(format!("600 balanced, {total} long-tail"))
}

// --- prompts and parser -----------------------------------------------------

fn prompt_goldens() -> Check {
    common::check_goldens()?;
    let prompts = common::rendered_prompts();
    let all: String = prompts.iter().map(|p| p.1.as_str()).collect();
    for needle in [GENERAL_ATTRIBUTE, "Questions: Describe this image in details. Answer:"] {
        ensure(all.contains(needle), || format!("no prompt contains {needle:?}"))?;
    }
    Ok(format!("{} templates", prompts.len()))
}

fn bundle(id: &str, general: &str) -> AttributeBundle {
    AttributeBundle {
        image_id: id.into(),
        super_category: "bird".into(),
        attributes: vec![GENERAL_ATTRIBUTE.into()],
        descriptions: vec![AttributeDescription {
            attribute: GENERAL_ATTRIBUTE.into(),
            text: general.into(),
            empty: false,
        }],
    }
}

fn parser_corpus() -> Check {
    let cases = common::parser_corpus();
    ensure(cases.len() >= 20, || format!("only {} cases", cases.len()))?;
    for case in &cases {
        common::check_parser_case(case)?;
    }
    let empty = cases.iter().filter(|c| c.names.is_empty()).count();

    let llm = MockLlm::default().with_rule("garbled", vec!["I'm sorry, I can't help with {\"names\": [".into()]);
    let providers = finer_core::providers::Providers {
        llm: Arc::new(llm),
        ..hashed_providers(0, 4)
    };
    let bundles = [
        bundle("a.png", "a photo of a Green Jay"),
        bundle("b.png", "a garbled photo"),
    ];
    let out = reason_names(&providers, &Templates::default(), &bundles, 3, 0.9).map_err(|e| e.to_string())?;
    ensure(out[1].names.is_empty(), || format!("garbled reply gave {:?}", out[1].names))?;
    let names = dedup(out.iter().flat_map(|o| o.names.iter().map(String::as_str))).map_err(|e| e.to_string())?;
    ensure(names.len() == 3, || format!("names {names:?}"))?;
    Ok(format!("{} cases, {empty} yield no names", cases.len()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("mock end-to-end determinism", mock_end_to_end),
        ("assignment vs brute force", assignment_oracle),
        ("cACC vs exhaustive matching", cacc_oracle),
        ("denoise properties", denoise_properties),
        ("classifier math", classifier_math),
        ("samplers", samplers),
        ("prompt goldens", prompt_goldens),
        ("parser robustness corpus", parser_corpus),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        match result {
            Ok(detail) => println!("PASS {name}: {detail} ({took:.2?})"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} ({took:.2?})");
            }
        }
    }
    println!("{} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
