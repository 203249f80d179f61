//! End-to-end acceptance checks. Run with `cargo test --test acceptance`;
//! prints one PASS/FAIL line per criterion and exits non-zero on failure.

// NaN must fail a check, hence the negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::future::Future;
use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use futures::FutureExt;
use lessonplan_cli::BATCH_MANIFEST;
use lessonplan_core::corpus::{Chunk, Edition, Level};
use lessonplan_core::embedding::{EmbeddingVector, OfflineEmbedder};
use lessonplan_core::generation::mock::{MockLlm, ScriptedLlm, Step};
use lessonplan_core::generation::{
    generate_plan, run_generation, ClassSize, GenerationError, LessonRequest, PromptTemplate, Providers,
    WARNING_LOW_EVIDENCE, WARNING_TOPIC_MISMATCH,
};
use lessonplan_core::lpap::stats::{cohen_kappa, percent_agreement, spearman_correlation, wilcoxon_signed_rank};
use lessonplan_core::lpap::{
    average_raters, classify_band, score_percentage, score_presence_items, BandTable, ItemKind, QualityBand,
    RaterScore, Rubric,
};
use lessonplan_core::plan::{
    from_archival_json, parse_lesson_plan, to_markup, validate_format, LessonPlan, Phase, ProcedureStep,
    GENERAL_INFORMATION_KEYS, PREPARATION_KEYS,
};
use lessonplan_core::provider::TextGenerator;
use lessonplan_core::store::{
    build_store, load_store, persist_store, IngestMeta, StoreError, VectorStore, CHUNKS_FILE, MANIFEST_FILE,
    VECTORS_FILE,
};
use lessonplan_service::{router, AppState, ErrorBody, GenerateResponse, Health};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    if took > limit {
        Err(format!("took {took:.2?}, limit {limit:?}"))
    } else {
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// 1. retrieval

fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    match rng.gen_range(0..10) {
        0 => vec![0.0; dim],
        1..=3 => (0..dim).map(|_| rng.gen_range(-1i8..=1) as f32).collect(),
        _ => (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
    }
}

fn chunk(subject: &str, id: String, text: String, page: u32) -> Chunk {
    Chunk {
        char_count: text.chars().count(),
        chunk_id: id,
        subject: subject.into(),
        text,
        page_start: page,
        page_end: page + 1,
    }
}

fn meta(dim: usize, seconds: i64) -> IngestMeta {
    IngestMeta {
        level: Level::S1,
        edition: Edition::Student,
        chunk_size: 400,
        overlap: 50,
        embedder_id: format!("random-{dim}"),
        created_at: Utc.timestamp_opt(1_700_000_000 + seconds, 0).unwrap(),
    }
}

fn random_store(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> VectorStore {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    let mut vectors: Vec<Vec<f32>> = Vec::with_capacity(n);
    for _ in 0..n {
        let v = if !vectors.is_empty() && rng.gen_bool(0.15) {
            vectors[rng.gen_range(0..vectors.len())].clone()
        } else {
            random_vector(rng, dim)
        };
        vectors.push(v);
    }
    let chunks = ids
        .iter()
        .map(|&i| chunk("Subject", format!("c{i:05}"), format!("text {i} é ü \"q\""), i as u32 + 1))
        .collect();
    let vectors = vectors.into_iter().map(|v| EmbeddingVector::new(v).unwrap()).collect();
    build_store("Subject", chunks, vectors, meta(dim, rng.gen_range(0..1_000_000))).unwrap()
}

/// Sort every scorable record and cut, the obvious way.
fn brute_force(store: &VectorStore, query: &[f32], k: usize, min_sim: f64) -> Vec<(String, f64)> {
    let qn: f64 = query.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    let mut all: Vec<(String, f64)> = store
        .records()
        .iter()
        .filter_map(|r| {
            let v = r.vector.values();
            let vn: f64 = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
            if vn == 0.0 {
                return None;
            }
            let dot: f64 = v.iter().zip(query).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum();
            let cos = (dot / (qn * vn)).clamp(-1.0, 1.0);
            (cos >= min_sim).then(|| (r.chunk.chunk_id.clone(), cos))
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut stores, mut queries) = (0, 0);
    for _ in 0..120 {
        let n = rng.gen_range(1..=1000);
        let dim = rng.gen_range(1..=64);
        let store = random_store(&mut rng, n, dim);
        stores += 1;
        for _ in 0..5 {
            let mut q = random_vector(&mut rng, dim);
            if q.iter().all(|&x| x == 0.0) {
                q[0] = 1.0;
            }
            if rng.gen_bool(0.2) {
                let r = &store.records()[rng.gen_range(0..n)];
                if r.vector.values().iter().any(|&x| x != 0.0) {
                    q = r.vector.values().to_vec();
                }
            }
            let k = rng.gen_range(1..=n + 5);
            let min_sim = if rng.gen_bool(0.5) { -1.0 } else { rng.gen_range(-0.5..0.8) };
            let got = store.top_k(&EmbeddingVector::new(q.clone()).unwrap(), k, min_sim).map_err(|e| e.to_string())?;
            let want = brute_force(&store, &q, k, min_sim);
            ensure!(got.len() == want.len(), "n={n} dim={dim} k={k}: {} results, oracle {}", got.len(), want.len());
            for (i, (g, (id, score))) in got.iter().zip(&want).enumerate() {
                ensure!(&g.chunk.chunk_id == id, "n={n} dim={dim} rank {i}: {} vs oracle {id}", g.chunk.chunk_id);
                ensure!((g.score - score).abs() <= 1e-6, "rank {i}: score {} vs {score}", g.score);
            }
            queries += 1;
        }
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!("{stores} stores, {queries} queries"))
}

// ---------------------------------------------------------------------------
// 2. persistence

fn flip_byte(path: &Path, rng: &mut ChaCha8Rng, skip: Option<(usize, usize)>) -> usize {
    let mut bytes = std::fs::read(path).unwrap();
    let pos = loop {
        let p = rng.gen_range(0..bytes.len());
        if skip.is_none_or(|(a, b)| p < a || p >= b) {
            break p;
        }
    };
    bytes[pos] ^= 1 << rng.gen_range(0..8);
    std::fs::write(path, bytes).unwrap();
    pos
}

fn created_at_span(manifest: &[u8]) -> (usize, usize) {
    let text = std::str::from_utf8(manifest).unwrap();
    let start = text.find("\"created_at\"").unwrap();
    let end = start + text[start..].find('\n').unwrap();
    (start, end)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for round in 0..50 {
        let n = rng.gen_range(1..=200);
        let dim = rng.gen_range(1..=64);
        let store = random_store(&mut rng, n, dim);
        let a = tmp.path().join(format!("a{round}"));
        let b = tmp.path().join(format!("b{round}"));
        let digest = persist_store(&store, &a).map_err(|e| e.to_string())?;
        let loaded = load_store(&a).map_err(|e| format!("round {round}: {e}"))?;
        ensure!(loaded == store, "round {round}: loaded store differs");
        for (x, y) in loaded.records().iter().zip(store.records()) {
            let bits = |v: &EmbeddingVector| v.values().iter().map(|f| f.to_bits()).collect::<Vec<_>>();
            ensure!(bits(&x.vector) == bits(&y.vector), "round {round}: vector bits differ");
        }
        ensure!(persist_store(&loaded, &b).map_err(|e| e.to_string())? == digest, "round {round}: digest changed");
        for f in [MANIFEST_FILE, CHUNKS_FILE, VECTORS_FILE] {
            ensure!(
                std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap(),
                "round {round}: {f} not byte-identical after re-persist"
            );
        }

        let file = [VECTORS_FILE, CHUNKS_FILE][round % 2];
        let pos = flip_byte(&b.join(file), &mut rng, None);
        match load_store(&b) {
            Err(StoreError::DigestMismatch { .. }) => {}
            other => return Err(format!("round {round}: flipped {file}[{pos}] gave {other:?}")),
        }

        persist_store(&store, &b).map_err(|e| e.to_string())?;
        let manifest = std::fs::read(b.join(MANIFEST_FILE)).unwrap();
        let pos = flip_byte(&b.join(MANIFEST_FILE), &mut rng, Some(created_at_span(&manifest)));
        ensure!(load_store(&b).is_err(), "round {round}: flipped {MANIFEST_FILE}[{pos}] loaded");
    }
    within(start, Duration::from_secs(10))?;
    Ok("50 round trips".into())
}

// ---------------------------------------------------------------------------
// 3. scoring anchors

fn rater_with_total(rubric: &Rubric, total: u32) -> RaterScore {
    let mut left = total;
    let scores = rubric
        .items()
        .iter()
        .map(|i| {
            let s = left.min(i.max_points);
            left -= s;
            (i.item_id.clone(), s)
        })
        .collect();
    RaterScore {
        plan_id: "History01".into(),
        rater_id: "r1".into(),
        scores,
    }
}

fn criterion_3() -> Outcome {
    let rubric = Rubric::default();
    let bands = BandTable::default();
    ensure!(rubric.items().len() == 22 && rubric.max_total() == 44, "rubric is not 22 items / 44 points");
    let pct = |t: f64| score_percentage(t, &rubric).map_err(|e| e.to_string());
    ensure!(pct(44.0)? == 100.0, "44/44 -> {}", pct(44.0)?);
    ensure!(pct(33.0)? == 75.0, "33/44 -> {}", pct(33.0)?);
    ensure!(classify_band(75.0, &bands) == QualityBand::Good, "75% band");
    ensure!(classify_band(85.0, &bands) == QualityBand::VeryGood, "85% band");
    ensure!(classify_band(92.0, &bands) == QualityBand::Excellent, "92% band");
    ensure!(pct(28.6)? == 65.0, "28.6/44 -> {}", pct(28.6)?);
    ensure!(classify_band(65.0, &bands).as_str() == "good", "65% band");
    let record = average_raters(&[rater_with_total(&rubric, 33)], &rubric, &bands).map_err(|e| e.to_string())?;
    ensure!(record.percentage == 75.0 && record.band.as_str() == "good", "averaged 33/44: {record:?}");
    let record = average_raters(&[rater_with_total(&rubric, 44)], &rubric, &bands).map_err(|e| e.to_string())?;
    ensure!(record.percentage == 100.0 && record.band.as_str() == "excellent", "averaged 44/44: {record:?}");
    Ok("5 anchors".into())
}

// ---------------------------------------------------------------------------
// 4. statistics

fn oracle_rank(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|v| {
            let below = values.iter().filter(|w| *w < v).count() as f64;
            let equal = values.iter().filter(|w| *w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn oracle_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn oracle_kappa(x: &[u32], y: &[u32]) -> Option<f64> {
    let n = x.len() as f64;
    let mut table = [[0.0f64; 3]; 3];
    for (&a, &b) in x.iter().zip(y) {
        table[a as usize][b as usize] += 1.0;
    }
    let po = (0..3).map(|i| table[i][i]).sum::<f64>() / n;
    let pe = (0..3)
        .map(|i| table[i].iter().sum::<f64>() / n * (0..3).map(|r| table[r][i]).sum::<f64>() / n)
        .sum::<f64>();
    ((1.0 - pe).abs() > 1e-15).then(|| (po - pe) / (1.0 - pe))
}

fn oracle_wilcoxon_p(x: &[f64], y: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    let ranks = oracle_rank(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let total: f64 = ranks.iter().sum();
    let w_plus: f64 = ranks.iter().zip(&d).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let w = w_plus.min(total - w_plus);
    let mut extreme = 0u64;
    for mask in 0u32..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
        if s.min(total - s) <= w + 1e-9 {
            extreme += 1;
        }
    }
    extreme as f64 / (1u64 << n) as f64
}

fn random_rater(rng: &mut ChaCha8Rng, rubric: &Rubric, id: &str) -> RaterScore {
    let mode = rng.gen_range(0..10);
    let constant = rng.gen_range(0..=2);
    RaterScore {
        plan_id: "P".into(),
        rater_id: id.into(),
        scores: rubric
            .items()
            .iter()
            .map(|i| {
                let s = if mode == 0 { constant } else { rng.gen_range(0..=2) };
                (i.item_id.clone(), s)
            })
            .collect(),
    }
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rubric = Rubric::default();
    let mut undefined = 0;
    for case in 0..500 {
        let a = random_rater(&mut rng, &rubric, "a");
        let mut b = random_rater(&mut rng, &rubric, "b");
        if case % 7 == 0 {
            b.scores = a.scores.clone();
        }
        let x: Vec<u32> = a.scores.values().copied().collect();
        let y: Vec<u32> = b.scores.values().copied().collect();

        let agree = 100.0 * x.iter().zip(&y).filter(|(p, q)| p == q).count() as f64 / 22.0;
        let got = percent_agreement(&a, &b).map_err(|e| e.to_string())?;
        ensure!((got - agree).abs() <= 1e-9, "case {case}: agreement {got} vs {agree}");

        let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let rho = oracle_pearson(&oracle_rank(&xf), &oracle_rank(&yf));
        match (spearman_correlation(&a, &b), rho) {
            (Ok(g), Some(w)) => ensure!((g - w).abs() <= 1e-9, "case {case}: spearman {g} vs {w}"),
            (Err(_), None) => undefined += 1,
            (g, w) => return Err(format!("case {case}: spearman {g:?} vs oracle {w:?}")),
        }
        match (cohen_kappa(&a, &b), oracle_kappa(&x, &y)) {
            (Ok(g), Some(w)) => ensure!((g - w).abs() <= 1e-9, "case {case}: kappa {g} vs {w}"),
            (Err(_), None) => undefined += 1,
            (g, w) => return Err(format!("case {case}: kappa {g:?} vs oracle {w:?}")),
        }
    }

    let mut wilcoxon_cases = 0;
    for n in 0..=12 {
        for _ in 0..40 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..=8) as f64 * 0.5).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..=8) as f64 * 0.5).collect();
            let got = wilcoxon_signed_rank(&x, &y).map_err(|e| e.to_string())?;
            let want = oracle_wilcoxon_p(&x, &y);
            ensure!((got.p_value - want).abs() <= 1e-12, "n={n}: p {} vs enumeration {want} ({x:?} {y:?})", got.p_value);
            wilcoxon_cases += 1;
        }
    }
    within(start, Duration::from_secs(60))?;
    Ok(format!("500 rater pairs ({undefined} undefined statistics), {wilcoxon_cases} Wilcoxon cases"))
}

// ---------------------------------------------------------------------------
// 5. batch protocol

fn expected_topics() -> BTreeMap<String, Vec<(usize, String)>> {
    lessonplan_fixtures::subjects()
        .into_iter()
        .map(|s| {
            let picks = (0..8)
                .map(|i| {
                    let entry = &s.toc.entries[2 * i];
                    let span = entry.page_end - entry.page_start + 1;
                    let title = match entry.subtopics.first() {
                        Some(sub) if span > 25 => sub.title.clone(),
                        _ => entry.title.clone(),
                    };
                    (2 * i, title)
                })
                .collect();
            (s.subject.to_string(), picks)
        })
        .collect()
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

async fn criterion_5() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let stores = common::ingest_fixtures(tmp.path()).await;
    let (first, second) = (tmp.path().join("run1"), tmp.path().join("run2"));
    let manifest = common::run_batch(&stores, &first, 1).await;
    common::run_batch(&stores, &second, 4).await;

    ensure!(manifest.plans.len() == 24, "{} plans", manifest.plans.len());
    ensure!(manifest.failures() == 0, "{} failures", manifest.failures());
    let expected = expected_topics();
    for (subject, picks) in &expected {
        let rows: Vec<_> = manifest.plans.iter().filter(|r| &r.subject == subject).collect();
        ensure!(rows.len() == 8, "{subject}: {} plans", rows.len());
        for (row, (index, title)) in rows.iter().zip(picks) {
            ensure!(row.toc_index == *index && &row.topic == title, "{}: {:?} vs {title:?}", row.plan_id, row.topic);
            let text = std::fs::read_to_string(first.join(row.file.as_ref().unwrap())).unwrap();
            let plan = from_archival_json(&text).map_err(|e| e.to_string())?;
            ensure!(validate_format(&plan).valid, "{} fails validate_format", row.plan_id);
            ensure!(plan.topic() == title, "{} topic {:?}", row.plan_id, plan.topic());
            let gi = &plan.general_information;
            ensure!(gi.get("class_size").map(String::as_str) == Some(">60"), "{} class size {:?}", row.plan_id, gi.get("class_size"));
            ensure!(gi.get("periods").map(String::as_str) == Some("1"), "{} periods {:?}", row.plan_id, gi.get("periods"));
            ensure!(plan.extra_periods.is_empty(), "{} has extra periods", row.plan_id);
        }
    }
    let kenya = manifest
        .plans
        .iter()
        .find(|r| r.topic == lessonplan_fixtures::SHORT_TOPIC)
        .ok_or("no Kenya row")?;
    ensure!(kenya.warnings.iter().any(|w| w == WARNING_LOW_EVIDENCE), "Kenya row lacks LOW_EVIDENCE");

    let (a, b) = (read_dir_bytes(&first), read_dir_bytes(&second));
    ensure!(a.len() == 25 && a.contains_key(BATCH_MANIFEST), "{} files written", a.len());
    ensure!(a == b, "reruns differ");
    Ok("24 plans, byte-stable".into())
}

// ---------------------------------------------------------------------------
// 6. presence items

const WORDS: [&str; 12] = [
    "map", "river", "fraction", "keyboard", "group", "chart", "Uganda", "lesson", "notes", "volume", "quiz", "kingdom",
];

fn phrase(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(1..=6);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn random_plan(rng: &mut ChaCha8Rng) -> LessonPlan {
    let mut plan = LessonPlan::default();
    for key in GENERAL_INFORMATION_KEYS {
        plan.general_information.insert(key.into(), phrase(rng));
    }
    for key in PREPARATION_KEYS {
        plan.preparation.insert(key.into(), phrase(rng));
    }
    if rng.gen_bool(0.3) {
        plan.preparation.insert("competency".into(), phrase(rng));
    }
    let mut phases: Vec<Phase> = Phase::ALL.to_vec();
    for _ in 0..rng.gen_range(0..4) {
        phases.push(*Phase::ALL.choose(rng).unwrap());
    }
    phases.shuffle(rng);
    plan.procedure = phases
        .into_iter()
        .map(|phase| ProcedureStep {
            phase,
            minutes: rng.gen_range(1..=60),
            teacher_activity: phrase(rng),
            learner_activity: phrase(rng),
        })
        .collect();
    plan
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rubric = Rubric::default();
    let presence: BTreeSet<&str> = rubric
        .items()
        .iter()
        .filter(|i| i.kind == ItemKind::Presence)
        .map(|i| i.item_id.as_str())
        .collect();
    ensure!(!presence.is_empty(), "rubric has no presence items");
    for case in 0..200 {
        let generated = random_plan(&mut rng);
        let parsed = parse_lesson_plan(&to_markup(&generated)).map_err(|e| format!("case {case}: {e}"))?;
        for plan in [&generated, &parsed] {
            let report = validate_format(plan);
            ensure!(report.valid, "case {case}: plan invalid: {report:?}");
            let scores = score_presence_items(plan, &rubric);
            ensure!(scores.keys().map(String::as_str).collect::<BTreeSet<_>>() == presence, "case {case}: items {scores:?}");
            for (id, s) in &scores {
                ensure!(*s == rubric.item(id).unwrap().max_points, "case {case}: {id} scored {s}");
            }
        }
    }
    Ok("200 plans at full presence credit".into())
}

// ---------------------------------------------------------------------------
// 7. hallucination guards

const OFF_TOPIC_PLAN: &str = "\
## GENERAL INFORMATION
Topic: Mukasa and the court of the Kabaka
Subject: History
Level: S1
Class size: >60
Periods: 1
Date: ____
## PREPARATION
Learning Objective: Learners describe how Mukasa served at the court of the Kabaka
Materials: Textbook
References: p. 3
## PROCEDURE
- [introduction|5] teacher: Tells the story of Mukasa | learners: Listen
- [development|25] teacher: Explains the court | learners: Discuss
- [wrap_up_and_assessment|10] teacher: Asks questions | learners: Answer
";

fn request(subject: &str, topic: &str, class_size: ClassSize, periods: u32) -> LessonRequest {
    LessonRequest {
        level: Level::S1,
        subject: subject.into(),
        periods,
        class_size,
        topic: topic.into(),
    }
}

fn providers(llm: impl TextGenerator + 'static) -> Providers {
    Providers {
        embedder: Arc::new(OfflineEmbedder::default()),
        llm: Arc::new(llm),
    }
}

async fn criterion_7() -> Outcome {
    let stores = lessonplan_fixtures::store_set().await;
    let config = common::generation_config();
    let template = PromptTemplate::default();
    let sizes = [ClassSize::Under30, ClassSize::From30To60, ClassSize::Over60];
    let mut runs = 0;
    for topic in ["Kenya", "kenya", "KENYA", "  Kenya  "] {
        for size in sizes {
            for periods in 1..=3 {
                let req = request(lessonplan_fixtures::SHORT_TOPIC_SUBJECT, topic, size, periods);
                let result = run_generation(&stores, &req, &providers(MockLlm::new()), &config, &template)
                    .await
                    .map_err(|e| e.to_string())?;
                ensure!(result.confidence.page_equivalents < 1.0, "{topic:?}: {} page-equivalents", result.confidence.page_equivalents);
                ensure!(result.warnings.iter().any(|w| w == WARNING_LOW_EVIDENCE), "{topic:?} {size:?} {periods}: {:?}", result.warnings);
                runs += 1;
            }
        }
    }
    let mut flagged = 0;
    for fixture in lessonplan_fixtures::subjects() {
        // The Mukasa entry itself is the one topic this plan is on.
        for entry in fixture.toc.entries.iter().filter(|e| e.title != lessonplan_fixtures::OFF_TOPIC) {
            for size in sizes {
                let req = request(fixture.subject, &entry.title, size, 1);
                let result = run_generation(&stores, &req, &providers(ScriptedLlm::replies([OFF_TOPIC_PLAN])), &config, &template)
                    .await
                    .map_err(|e| e.to_string())?;
                ensure!(
                    result.warnings.iter().any(|w| w == WARNING_TOPIC_MISMATCH),
                    "{}/{}: {:?}",
                    fixture.subject,
                    entry.title,
                    result.warnings
                );
                flagged += 1;
            }
        }
    }
    Ok(format!("{runs} short-evidence runs, {flagged} off-topic runs"))
}

// ---------------------------------------------------------------------------
// 8. retries

const MALFORMED: [&str; 4] = [
    "<html><body>Lesson plan</body></html>",
    "",
    "## GENERAL INFORMATION\nTopic: Kenya\n## PREPARATION\nLearning Objective: x\n",
    "Sure! Here is your lesson plan about Kenya.",
];

fn valid_plan() -> String {
    OFF_TOPIC_PLAN.replace("Mukasa and the court of the Kabaka", "Kenya")
}

async fn criterion_8() -> Outcome {
    let mut cases = 0;
    for max_retries in 0..=3u32 {
        for bad in 0..=max_retries {
            let mut replies: Vec<String> = (0..bad as usize).map(|i| MALFORMED[i % MALFORMED.len()].to_string()).collect();
            replies.push(valid_plan());
            let llm = ScriptedLlm::replies(replies);
            let attempt = generate_plan(&llm, "prompt", max_retries).await.map_err(|e| e.to_string())?;
            ensure!(attempt.retries_used == bad, "max {max_retries}: retries_used {} after {bad} bad replies", attempt.retries_used);
            ensure!(validate_format(&attempt.plan).valid, "plan invalid");
            ensure!(llm.calls() == bad as usize + 1, "calls {}", llm.calls());
            cases += 1;
        }
        let llm = ScriptedLlm::new((0..10).map(|i| Step::Reply(MALFORMED[i % MALFORMED.len()].into())));
        match generate_plan(&llm, "prompt", max_retries).await {
            Err(GenerationError::FormatFailure { retries, .. }) if retries == max_retries => {}
            other => return Err(format!("max {max_retries}: always-malformed gave {:?}", other.map(|a| a.retries_used))),
        }
        ensure!(llm.calls() == max_retries as usize + 1, "max {max_retries}: {} calls", llm.calls());
        cases += 1;
    }

    let stores = lessonplan_fixtures::store_set().await;
    let llm = ScriptedLlm::replies([MALFORMED[0].to_string(), valid_plan()]);
    let result = run_generation(
        &stores,
        &request("History", "Kenya", ClassSize::Over60, 1),
        &providers(llm),
        &common::generation_config(),
        &PromptTemplate::default(),
    )
    .await
    .map_err(|e| e.to_string())?;
    ensure!(result.retries_used == 1, "pipeline retries_used {}", result.retries_used);
    ensure!(validate_format(&result.plan).valid, "pipeline plan invalid");
    Ok(format!("{} scripted cases", cases + 1))
}

// ---------------------------------------------------------------------------
// 9. service

async fn serve_with(llm: impl TextGenerator + 'static) -> String {
    let state = AppState::new(providers(llm), common::generation_config(), PromptTemplate::default());
    state.set_stores(lessonplan_fixtures::store_set().await);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(state, None, None);
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

async fn post(base: &str, body: &Value) -> Result<(u16, String), String> {
    let resp = reqwest::Client::new()
        .post(format!("{base}/api/generate"))
        .json(body)
        .send()
        .await
        .map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    Ok((status, resp.text().await.map_err(|e| e.to_string())?))
}

fn body(subject: &str, topic: &str) -> Value {
    json!({"level": "S1", "subject": subject, "periods": 1, "class_size": ">60", "topic": topic})
}

fn expect_error(status: u16, text: &str, want: u16, stage: &str) -> Result<(), String> {
    ensure!(status == want, "expected {want}, got {status}: {text}");
    let err: ErrorBody = serde_json::from_str(text).map_err(|e| format!("{e}: {text}"))?;
    ensure!(err.stage == stage, "stage {:?}, expected {stage}", err.stage);
    Ok(())
}

async fn criterion_9() -> Outcome {
    let base = serve_with(MockLlm::new()).await;
    let (status, first) = post(&base, &body("History", "Migration of the Bantu")).await?;
    ensure!(status == 200, "200 path returned {status}: {first}");
    let response: GenerateResponse = serde_json::from_str(&first).map_err(|e| e.to_string())?;
    ensure!(validate_format(&response.plan).valid, "200 plan invalid");
    let (_, second) = post(&base, &body("History", "Migration of the Bantu")).await?;
    ensure!(first == second, "identical requests gave different bodies");

    let (status, text) = post(&base, &body("History", "   ")).await?;
    expect_error(status, &text, 400, "validate")?;
    let (status, text) = post(&base, &json!({"level": "S1", "subject": "History", "periods": 0, "class_size": ">60", "topic": "Kenya"})).await?;
    expect_error(status, &text, 400, "validate")?;
    let (status, text) = post(&base, &body("Physics", "Forces")).await?;
    expect_error(status, &text, 404, "retrieve")?;

    let base = serve_with(ScriptedLlm::replies(MALFORMED.iter().cycle().take(10).map(|s| s.to_string()))).await;
    let (status, text) = post(&base, &body("History", "Migration of the Bantu")).await?;
    expect_error(status, &text, 422, "generate")?;

    let base = serve_with(ScriptedLlm::new([Step::Fail("provider down".into())])).await;
    let (status, text) = post(&base, &body("History", "Migration of the Bantu")).await?;
    expect_error(status, &text, 502, "generate")?;

    let base = serve_with(MockLlm::with_delay(Duration::from_millis(1500))).await;
    let pending = tokio::spawn({
        let base = base.clone();
        async move { post(&base, &body("History", "Migration of the Bantu")).await }
    });
    tokio::time::sleep(Duration::from_millis(200)).await;
    let asked = Instant::now();
    let health: Health = reqwest::get(format!("{base}/api/health"))
        .await
        .map_err(|e| e.to_string())?
        .json()
        .await
        .map_err(|e| e.to_string())?;
    let answered = asked.elapsed();
    ensure!(!pending.is_finished(), "generation finished before health was checked");
    ensure!(health.status == "ok" && health.stores_loaded == 3, "health {health:?}");
    ensure!(answered < Duration::from_millis(500), "health took {answered:?}");
    let (status, _) = pending.await.map_err(|e| e.to_string())??;
    ensure!(status == 200, "delayed generation returned {status}");
    Ok("200/400/404/422/502, determinism, health in flight".into())
}

// ---------------------------------------------------------------------------

async fn check<F: Future<Output = Outcome>>(number: u32, name: &str, fut: F) -> bool {
    let start = Instant::now();
    let outcome = match AssertUnwindSafe(fut).catch_unwind().await {
        Ok(o) => o,
        Err(panic) => Err(panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let took = start.elapsed();
    match outcome {
        Ok(detail) => {
            println!("PASS {number} {name}: {detail} ({took:.2?})");
            true
        }
        Err(reason) => {
            println!("FAIL {number} {name}: {reason} ({took:.2?})");
            false
        }
    }
}

fn main() {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime");
    let results = runtime.block_on(async {
        vec![
            check(1, "retrieval exactness", async { criterion_1() }).await,
            check(2, "persistence", async { criterion_2() }).await,
            check(3, "scoring anchors", async { criterion_3() }).await,
            check(4, "statistics oracles", async { criterion_4() }).await,
            check(5, "batch protocol", criterion_5()).await,
            check(6, "presence items", async { criterion_6() }).await,
            check(7, "hallucination guards", criterion_7()).await,
            check(8, "retry contract", criterion_8()).await,
            check(9, "service conformance", criterion_9()).await,
        ]
    });
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
