//! Acceptance suite: one PASS/FAIL line per criterion, each with a pinned
//! tolerance and a wall-clock budget. Exits nonzero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use fcqa_core::embedding::EmbeddingError;
use fcqa_core::grounding::{build_tfidf, cosine_sim, ground_question, ground_text, vectorize};
use fcqa_core::metrics::evaluate;
use fcqa_core::model::checkpoint::{self, CheckpointError};
use fcqa_core::model::{prepare_dataset, train, CandidateAnswer, Step, WeightsSource};
use fcqa_core::pipeline::{ablation_matrix, AblationAxis, AblationInputs, RunConfig};
use fcqa_core::script::ScriptLine;
use fcqa_core::script::{is_function_header, segment};
use fcqa_core::toy::{toy_fixture, toy_model_config, toy_train_config};
use fcqa_core::{
    EmbeddingSet, EmbeddingTable, FeatureSet, GroundingMode, QaDataset, QaSample, Script, SegmentationMode, TokenList,
};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= tol, || format!("{what}: {a} vs {b} (tol {tol:e})"))
}

fn manual_grounding() -> Outcome {
    let raw = std::fs::read(fixtures().join("microwave_manual.json")).map_err(|e| e.to_string())?;
    let doc: serde_json::Value = serde_json::from_slice(&raw).map_err(|e| e.to_string())?;
    let question = doc["question"].as_str().ok_or("question missing")?;
    let paras: Vec<&str> =
        doc["function_paras"].as_array().ok_or("function_paras missing")?.iter().filter_map(|p| p.as_str()).collect();
    ensure(paras.len() == 4, || format!("expected 4 paras, got {}", paras.len()))?;
    let (weights, scores) = ground_text(question, &paras, None).map_err(|e| e.to_string())?;
    ensure(scores[1..].iter().all(|&s| scores[0] > s), || format!("para #1 not strictly highest: {scores:?}"))?;
    ensure(weights.argmax() == Some(0), || format!("weights argmax {:?}", weights.argmax()))?;
    Ok(format!("scores {:.3?}", scores))
}

/// Dense brute force: vocabulary, idf, tf-idf vectors and cosine from the definitions.
struct DenseOracle {
    vocab: Vec<String>,
    idf: Vec<f64>,
}

impl DenseOracle {
    fn new(docs: &[Vec<String>]) -> Self {
        let vocab: Vec<String> = docs.iter().flatten().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let n = docs.len() as f64;
        let idf = vocab
            .iter()
            .map(|t| {
                let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
                ((1.0 + n) / (1.0 + df)).ln() + 1.0
            })
            .collect();
        DenseOracle { vocab, idf }
    }

    fn vector(&self, tokens: &[String]) -> Vec<f64> {
        self.vocab
            .iter()
            .zip(&self.idf)
            .map(|(t, idf)| tokens.iter().filter(|x| *x == t).count() as f64 * idf)
            .collect()
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }

    fn weights(scores: &[f64], top_k: Option<usize>) -> Vec<f64> {
        let n = scores.len();
        let k = top_k.unwrap_or(n).min(n);
        let kept: Vec<usize> = (0..n)
            .filter(|&i| {
                let above = (0..n).filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j < i)).count();
                above < k
            })
            .collect();
        let total: f64 = kept.iter().map(|&i| scores[i]).sum();
        (0..n)
            .map(|i| match (kept.contains(&i), total > 0.0) {
                (false, _) => 0.0,
                (true, true) => scores[i] / total,
                (true, false) => 1.0 / k as f64,
            })
            .collect()
    }
}

fn tfidf_oracle() -> Outcome {
    const TOL: f64 = 1e-9;
    let mut rng = common::rng(50);
    let mut worst: f64 = 0.0;
    for corpus in 0..50 {
        let terms = rng.random_range(1..=50);
        let n_docs = rng.random_range(1..=10);
        let word = |rng: &mut rand_chacha::ChaCha8Rng| format!("w{}", rng.random_range(0..terms));
        let docs: Vec<Vec<String>> =
            (0..n_docs).map(|_| (0..rng.random_range(0..12)).map(|_| word(&mut rng)).collect()).collect();
        // Questions may use out-of-vocabulary terms.
        let question: Vec<String> =
            (0..rng.random_range(0..8)).map(|_| format!("w{}", rng.random_range(0..terms + 5))).collect();
        let top_k = if rng.random_bool(0.5) { Some(rng.random_range(1..=n_docs)) } else { None };

        let lists: Vec<TokenList> = docs.iter().map(|d| TokenList(d.clone())).collect();
        let model = build_tfidf(&lists).map_err(|e| e.to_string())?;
        let oracle = DenseOracle::new(&docs);
        ensure(model.vocab_size() == oracle.vocab.len(), || format!("corpus {corpus}: vocab size"))?;

        let q_sparse = vectorize(&model, &TokenList(question.clone()));
        let q_dense = oracle.vector(&question);
        for (a, b) in q_sparse.to_dense().iter().zip(&q_dense) {
            worst = worst.max((a - b).abs());
        }
        let mut scores = Vec::new();
        for (d, list) in docs.iter().zip(&lists) {
            let d_sparse = vectorize(&model, list);
            let d_dense = oracle.vector(d);
            for (a, b) in d_sparse.to_dense().iter().zip(&d_dense) {
                worst = worst.max((a - b).abs());
            }
            let cos = cosine_sim(&q_sparse, &d_sparse).map_err(|e| e.to_string())?;
            let expected = DenseOracle::cosine(&q_dense, &d_dense);
            worst = worst.max((cos - expected).abs());
            scores.push(expected);
        }
        let weights = ground_question(&model, &TokenList(question), &lists, top_k).map_err(|e| e.to_string())?;
        for (a, b) in weights.weights.iter().zip(DenseOracle::weights(&scores, top_k)) {
            worst = worst.max((a - b).abs());
        }
        ensure(worst <= TOL, || format!("corpus {corpus}: max abs diff {worst:e} > {TOL:e}"))?;
    }
    Ok(format!("max abs diff {worst:.1e} <= {TOL:e} over 50 corpora"))
}

fn random_script(rng: &mut rand_chacha::ChaCha8Rng, id: usize) -> Script {
    let n = rng.random_range(1..30);
    let mut t = 0.0;
    let lines = (0..n)
        .map(|i| {
            let text = match rng.random_range(0..4) {
                0 => format!("How to do thing {i}?"),
                1 => format!("  how TO adjust setting {i} ?"),
                2 => format!("To stop, press button {i}."),
                _ => format!("Press button {i}."),
            };
            let len = rng.random_range(0.0..4.0);
            let line = ScriptLine { start_s: t, end_s: t + len, text: text.trim().to_string() };
            t += len;
            line
        })
        .collect();
    Script { video_id: format!("v{id}"), lines }
}

fn segmentation_losslessness() -> Outcome {
    let mut rng = common::rng(100);
    let mut units_seen = 0;
    for id in 0..100 {
        let script = random_script(&mut rng, id);
        let n = script.lines.len();
        let headers = script.lines.iter().filter(|l| is_function_header(&l.text)).count();
        for mode in [SegmentationMode::FunctionCentric, SegmentationMode::SentenceCentric] {
            let units = segment(&script, mode).map_err(|e| e.to_string())?;
            units_seen += units.len();
            let indices: Vec<usize> = units.iter().flat_map(|u| u.source_line_indices.iter().copied()).collect();
            ensure(indices == (0..n).collect::<Vec<_>>(), || {
                format!("script {id} {mode}: lines not covered exactly once")
            })?;
            let joined = units.iter().map(|u| u.para_text.as_str()).collect::<Vec<_>>().join(" ");
            let all = script.lines.iter().map(|l| l.text.as_str()).collect::<Vec<_>>().join(" ");
            ensure(joined == all, || format!("script {id} {mode}: text not preserved"))?;
            let expected = match mode {
                SegmentationMode::SentenceCentric => n,
                SegmentationMode::FunctionCentric => headers.max(1),
            };
            ensure(units.len() == expected, || {
                format!("script {id} {mode}: {} units, expected {expected}", units.len())
            })?;
            if mode == SegmentationMode::FunctionCentric {
                for u in &units[1..] {
                    ensure(is_function_header(&script.lines[u.source_line_indices[0]].text), || {
                        format!("script {id}: unit {} does not open on a header", u.function_id)
                    })?;
                }
            }
        }
    }
    Ok(format!("100 scripts, {units_seen} units"))
}

fn gradient_check_all() -> Outcome {
    const TOL: f64 = 1e-4;
    let mut rng = common::rng(7);
    let mut worst = (0.0, String::new());
    let mut checked = 0;
    let mut runs = 0;
    for mode in [GroundingMode::CrossAttention, GroundingMode::Tfidf] {
        for features in FeatureSet::valid_combinations() {
            let cfg = common::small_config(features, mode);
            let params = common::random_params(&cfg, &mut rng, 0.5);
            let samples: Vec<_> = (0..2).map(|_| common::random_sample(&cfg, &mut rng, 3, 2, 3)).collect();
            let instances = [(0, 0), (0, 1), (1, 0), (1, 1)];
            let check = common::gradient_check(&cfg, &params, &samples, &instances);
            checked += check.checked;
            runs += 1;
            if check.max_rel_err > worst.0 {
                worst = (check.max_rel_err, format!("{mode} {features} {}", check.worst));
            }
        }
    }
    ensure(worst.0 < TOL, || format!("max rel err {:e} >= {TOL:e} at {}", worst.0, worst.1))?;
    Ok(format!("{runs} configs, {checked} entries, max rel err {:.1e} < {TOL:e} ({})", worst.0, worst.1))
}

fn toy_convergence() -> Outcome {
    let toy = toy_fixture();
    let table = EmbeddingSet::from(toy.table.clone());
    let functions = toy.function_sets(SegmentationMode::FunctionCentric);
    let config = toy_model_config(FeatureSet::ALL, GroundingMode::Tfidf, 0);
    let train_cfg = toy_train_config();
    let run = || -> Result<_, String> {
        let prepared =
            prepare_dataset(&toy.dataset, &functions, WeightsSource::for_config(&config, None), &table, &config)
                .map_err(|e| e.to_string())?;
        train(&prepared, None, &config, &train_cfg).map_err(|e| e.to_string())
    };
    let a = run()?;
    let b = run()?;
    let best = a.best();
    ensure(best.eval.r_at_1 == 100.0, || format!("best R@1 {}", best.eval.r_at_1))?;
    ensure(a.final_loss() < 0.1, || format!("final loss {}", a.final_loss()))?;
    ensure(checkpoint::encode(&config, &a.params) == checkpoint::encode(&config, &b.params), || {
        "same seed gave different checkpoints".into()
    })?;
    let first = a.log.iter().position(|e| e.eval.r_at_1 == 100.0).unwrap_or(usize::MAX);
    Ok(format!(
        "R@1 100 from epoch {first}, final loss {:.4} < 0.1, lr {:e}, {} epochs, checkpoints identical",
        a.final_loss(),
        train_cfg.lr,
        train_cfg.epochs
    ))
}

fn metrics_oracle() -> Outcome {
    const TOL: f64 = 1e-12;
    let mut rng = common::rng(20);
    let mut worst: f64 = 0.0;
    let candidate = |text: String| CandidateAnswer { text_emb_id: text, button_emb_id: None };
    for set in 0..20 {
        let mut samples = Vec::new();
        let mut predictions = Vec::new();
        let mut ranks = Vec::new();
        for s in 0..rng.random_range(1..8) {
            let mut steps = Vec::new();
            let mut sample_pred = Vec::new();
            for _ in 0..rng.random_range(1..5) {
                let m = rng.random_range(2..8);
                let gt = rng.random_range(0..m);
                let mut ranking: Vec<usize> = (0..m).collect();
                ranking.shuffle(&mut rng);
                ranks.push(ranking.iter().position(|&c| c == gt).unwrap() + 1);
                steps.push(Step {
                    candidates: (0..m).map(|j| candidate(format!("at:v:{s}{j}"))).collect(),
                    gt_index: gt,
                });
                sample_pred.push(ranking);
            }
            samples.push(QaSample {
                video_id: "v".into(),
                question_text: String::new(),
                question_emb_id: "q:v:0".into(),
                steps,
            });
            predictions.push(sample_pred);
        }
        let dataset = QaDataset { samples };
        let report = evaluate(&predictions, &dataset).map_err(|e| e.to_string())?;
        let n = ranks.len() as f64;
        let recall = |k: usize| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        let mr = ranks.iter().sum::<usize>() as f64 / n;
        let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
        for (got, want, what) in [
            (report.r_at_1, recall(1), "R@1"),
            (report.r_at_3, recall(3), "R@3"),
            (report.mr, mr, "MR"),
            (report.mrr, mrr, "MRR"),
        ] {
            close(got, want, TOL, &format!("set {set} {what}"))?;
            worst = worst.max((got - want).abs());
        }

        let perfect: Vec<Vec<Vec<usize>>> = dataset
            .samples
            .iter()
            .map(|s| {
                s.steps
                    .iter()
                    .map(|st| {
                        std::iter::once(st.gt_index)
                            .chain((0..st.candidates.len()).filter(|&c| c != st.gt_index))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let ideal = evaluate(&perfect, &dataset).map_err(|e| e.to_string())?;
        ensure(ideal.r_at_1 == 100.0 && ideal.mr == 1.0 && ideal.mrr == 1.0, || {
            format!("set {set}: perfect predictor {ideal:?}")
        })?;
    }
    Ok(format!("20 sets, max abs diff {worst:.1e} <= {TOL:e}; perfect predictor R@1 100, MR 1, MRR 1"))
}

fn ablation_harness() -> Outcome {
    let dir = fixtures().join("toy");
    let mut cfg = RunConfig::default();
    cfg.apply_file(&dir.join("toy.conf")).map_err(|e| e.to_string())?;
    let inputs = AblationInputs::load(&cfg).map_err(|e| e.to_string())?;
    let table = ablation_matrix(&cfg, &inputs, &[AblationAxis::Segmentation, AblationAxis::Grounding])
        .map_err(|e| e.to_string())?;
    ensure(table.rows.len() == 4, || format!("{} rows", table.rows.len()))?;
    let order: Vec<(SegmentationMode, GroundingMode)> =
        table.rows.iter().map(|r| (r.segmentation, r.grounding)).collect();
    let expected = [
        (SegmentationMode::SentenceCentric, GroundingMode::CrossAttention),
        (SegmentationMode::SentenceCentric, GroundingMode::Tfidf),
        (SegmentationMode::FunctionCentric, GroundingMode::CrossAttention),
        (SegmentationMode::FunctionCentric, GroundingMode::Tfidf),
    ];
    ensure(order == expected, || format!("row order {order:?}"))?;
    for r in &table.rows {
        let cells = [r.report.r_at_1, r.report.r_at_3, r.report.mr, r.report.mrr, r.final_loss];
        ensure(cells.iter().all(|v| v.is_finite()) && r.report.count > 0, || format!("unpopulated row {r:?}"))?;
    }
    let markdown = table.to_markdown();
    ensure(markdown.lines().count() == 6, || format!("markdown table:\n{markdown}"))?;
    let r1: Vec<String> = table.rows.iter().map(|r| format!("{:.0}", r.report.r_at_1)).collect();
    Ok(format!("4 rows populated, R@1 [{}]", r1.join(", ")))
}

fn format_round_trip() -> Outcome {
    let dir = fixtures().join("toy");
    let bytes = std::fs::read(dir.join("emb.emb1")).map_err(|e| e.to_string())?;
    let table = EmbeddingTable::from_bytes(&bytes).map_err(|e| e.to_string())?;
    ensure(table.to_bytes() == bytes, || "EMB1 re-encoding differs".into())?;
    ensure(table == toy_fixture().table, || "checked-in EMB1 differs from generator".into())?;

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = tmp.path().join("copy.emb1");
    fcqa_core::save_embeddings(&table, &path).map_err(|e| e.to_string())?;
    ensure(std::fs::read(&path).map_err(|e| e.to_string())? == bytes, || "saved EMB1 differs".into())?;
    ensure(fcqa_core::load_embeddings(&path).map_err(|e| e.to_string())? == table, || "loaded EMB1 differs".into())?;

    let mut bad = bytes.clone();
    bad[0] = b'X';
    ensure(matches!(EmbeddingTable::from_bytes(&bad), Err(EmbeddingError::BadMagic)), || {
        "EMB1 bad magic accepted".into()
    })?;
    for cut in [5, 11, 12, 20, bytes.len() - 1] {
        ensure(matches!(EmbeddingTable::from_bytes(&bytes[..cut]), Err(EmbeddingError::TruncatedFile(_))), || {
            format!("EMB1 truncated at {cut} not rejected as TruncatedFile")
        })?;
    }
    let mut nan = bytes.clone();
    let end = nan.len();
    nan[end - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    ensure(matches!(EmbeddingTable::from_bytes(&nan), Err(EmbeddingError::NonFiniteValue(_))), || {
        "EMB1 NaN accepted".into()
    })?;

    let config = toy_model_config(FeatureSet::ALL, GroundingMode::CrossAttention, 5);
    let params =
        fcqa_core::ModelParams::init(&config, &mut fcqa_core::model::stream_rng(5, 0)).map_err(|e| e.to_string())?;
    let ckpt = checkpoint::encode(&config, &params);
    let (config2, params2) = checkpoint::decode(&ckpt).map_err(|e| e.to_string())?;
    ensure(config2 == config, || "checkpoint config differs".into())?;
    let bits = |p: &fcqa_core::ModelParams| -> Vec<u64> {
        p.tensors().iter().flat_map(|(_, _, d)| d.iter().map(|v| v.to_bits())).collect()
    };
    ensure(bits(&params2) == bits(&params), || "checkpoint values not bit-exact".into())?;
    ensure(checkpoint::encode(&config2, &params2) == ckpt, || "checkpoint re-encoding differs".into())?;

    let mut bad = ckpt.clone();
    bad[3] = b'0';
    ensure(matches!(checkpoint::decode(&bad), Err(CheckpointError::BadMagic)), || {
        "checkpoint bad magic accepted".into()
    })?;
    for cut in [2, 6, 40, ckpt.len() - 1] {
        ensure(matches!(checkpoint::decode(&ckpt[..cut]), Err(CheckpointError::TruncatedFile(_))), || {
            format!("checkpoint truncated at {cut} not rejected as TruncatedFile")
        })?;
    }
    let mut nan = ckpt.clone();
    let end = nan.len();
    nan[end - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
    ensure(matches!(checkpoint::decode(&nan), Err(CheckpointError::NonFiniteValue(_))), || {
        "checkpoint NaN accepted".into()
    })?;
    Ok(format!(
        "EMB1 {} entries x {} and checkpoint {} bytes round-trip; corruptions rejected",
        table.len(),
        table.dim(),
        ckpt.len()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("manual-grounding", Duration::from_secs(1), manual_grounding),
        ("tfidf-oracle", Duration::from_secs(5), tfidf_oracle),
        ("segmentation-losslessness", Duration::from_secs(2), segmentation_losslessness),
        ("gradient-check", Duration::from_secs(30), gradient_check_all),
        ("toy-convergence", Duration::from_secs(60), toy_convergence),
        ("metrics-oracle", Duration::from_secs(1), metrics_oracle),
        ("ablation-harness", Duration::from_secs(300), ablation_harness),
        ("format-round-trip", Duration::from_secs(1), format_round_trip),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; took {elapsed:.2?}, budget {budget:?}"))
            }
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{elapsed:.2?} / {budget:?}]"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {name}: {reason} [{elapsed:.2?} / {budget:?}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
