//! A small synthetic fixture: two appliance videos, eight two-step questions
//! with three candidates per step, and dimension-8 embeddings.
//!
//! Every ground-truth answer carries `+ANSWER_MARGIN` in the first component of
//! its text embedding and every distractor `-ANSWER_MARGIN`, so a linear scorer
//! over answer text separates the steps. Button embeddings carry the same
//! signal at half strength.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use crate::embedding::{EmbeddingId, EmbeddingKind, EmbeddingTable};
use crate::model::{
    stream_rng, CandidateAnswer, FeatureSet, GroundingMode, ModelConfig, QaDataset, QaSample, Step, TrainConfig,
};
use crate::script::{segment_script, FunctionSet, Script, ScriptLine, SegmentationMode};

pub const TOY_DIM: usize = 8;
pub const TOY_SEED: u64 = 2022;
pub const ANSWER_MARGIN: f32 = 3.0;
pub const CANDIDATES: usize = 3;
pub const STEPS: usize = 2;

pub const TOY_HIDDEN: usize = 8;
pub const TOY_MLP_HIDDEN: usize = 32;
/// Ten times the default learning rate; the toy set is tiny.
pub const TOY_LR: f64 = 1e-3;

/// Run settings for the toy fixture in `key = value` form, paths relative to
/// the fixture directory.
pub const TOY_CONFIG: &str = "\
script_dir = scripts
data = qa.json
emb = emb.emb1
hidden = 8
mlp_hidden = 32
lr = 1e-3
epochs = 100
batch_size = 16
seed = 0
";

#[derive(Debug, Clone, PartialEq)]
pub struct ToyFixture {
    pub scripts: Vec<Script>,
    pub dataset: QaDataset,
    pub table: EmbeddingTable,
}

const VIDEOS: [(&str, [&str; 4], [&str; 4]); 2] = [
    (
        "microwave",
        [
            "How to defrost 1kg of fish?",
            "Press turbo defrost button.",
            "How to set microwave to 1 minute timer?",
            "Turn time knob clockwise to 1 minute.",
        ],
        [
            "How to defrost 2kg of fish?",
            "How to defrost fish in the microwave?",
            "How to set a 2 minute timer?",
            "How to set the microwave timer?",
        ],
    ),
    (
        "oven",
        [
            "How to preheat the oven?",
            "Press the bake button and turn the dial.",
            "How to use the grill?",
            "Press the grill button twice.",
        ],
        [
            "How to preheat the oven to 200 degrees?",
            "How to preheat before baking?",
            "How to grill a steak?",
            "How to switch on the grill?",
        ],
    ),
];

fn uniform(rng: &mut impl Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

pub fn toy_fixture() -> ToyFixture {
    let mut rng = stream_rng(TOY_SEED, 0);
    let mut table = EmbeddingTable::new(TOY_DIM).expect("positive dim");
    let put = |table: &mut EmbeddingTable, id: EmbeddingId, v: Vec<f32>| {
        table.insert(id.to_string(), v).expect("unique toy ids");
    };

    let mut scripts = Vec::new();
    let mut samples = Vec::new();
    for (v, (video, lines, questions)) in VIDEOS.iter().enumerate() {
        let script = Script {
            video_id: video.to_string(),
            lines: lines
                .iter()
                .enumerate()
                .map(|(i, text)| ScriptLine {
                    start_s: 4.0 * i as f64,
                    end_s: 4.0 * i as f64 + 3.5,
                    text: text.to_string(),
                })
                .collect(),
        };
        for mode in [SegmentationMode::FunctionCentric, SegmentationMode::SentenceCentric] {
            for unit in segment_script(&script, mode).expect("non-empty script").functions {
                put(
                    &mut table,
                    EmbeddingId::new(EmbeddingKind::FunctionText, *video, &unit.function_id),
                    uniform(&mut rng, TOY_DIM),
                );
                put(
                    &mut table,
                    EmbeddingId::new(EmbeddingKind::FunctionVisual, *video, &unit.function_id),
                    uniform(&mut rng, TOY_DIM),
                );
            }
        }
        scripts.push(script);

        for (k, question) in questions.iter().enumerate() {
            let qid = EmbeddingId::new(EmbeddingKind::Question, *video, format!("q{k}"));
            put(&mut table, qid.clone(), uniform(&mut rng, TOY_DIM));
            let steps = (0..STEPS)
                .map(|i| {
                    let gt_index = (v + k + i) % CANDIDATES;
                    let candidates = (0..CANDIDATES)
                        .map(|j| {
                            let local = format!("q{k}s{i}c{j}");
                            let sign = if j == gt_index { 1.0 } else { -1.0 };
                            let mut text = uniform(&mut rng, TOY_DIM);
                            text[0] = sign * ANSWER_MARGIN;
                            let mut button = uniform(&mut rng, TOY_DIM);
                            button[0] = sign * ANSWER_MARGIN / 2.0;
                            let at = EmbeddingId::new(EmbeddingKind::AnswerText, *video, &local);
                            let av = EmbeddingId::new(EmbeddingKind::AnswerVisual, *video, &local);
                            put(&mut table, at.clone(), text);
                            put(&mut table, av.clone(), button);
                            CandidateAnswer { text_emb_id: at.to_string(), button_emb_id: Some(av.to_string()) }
                        })
                        .collect();
                    Step { candidates, gt_index }
                })
                .collect();
            samples.push(QaSample {
                video_id: video.to_string(),
                question_text: question.to_string(),
                question_emb_id: qid.to_string(),
                steps,
            });
        }
    }
    ToyFixture { scripts, dataset: QaDataset { samples }, table }
}

pub fn toy_model_config(features: FeatureSet, grounding: GroundingMode, seed: u64) -> ModelConfig {
    let mut cfg = ModelConfig::new(TOY_DIM, TOY_DIM, features, grounding, seed);
    cfg.hidden = TOY_HIDDEN;
    cfg.mlp_hidden = TOY_MLP_HIDDEN;
    cfg
}

pub fn toy_train_config() -> TrainConfig {
    TrainConfig { lr: TOY_LR, epochs: 100, batch_size: 16, ..TrainConfig::default() }
}

impl ToyFixture {
    pub fn function_sets(&self, mode: SegmentationMode) -> BTreeMap<String, FunctionSet> {
        self.scripts.iter().map(|s| (s.video_id.clone(), segment_script(s, mode).expect("non-empty script"))).collect()
    }

    /// Writes `scripts/<video>.json`, `qa.json`, `emb.emb1` and `toy.conf` under `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        let scripts = dir.join("scripts");
        std::fs::create_dir_all(&scripts)?;
        for script in &self.scripts {
            let json = serde_json::to_string_pretty(script).expect("script serializes");
            std::fs::write(scripts.join(format!("{}.json", script.video_id)), json + "\n")?;
        }
        let qa = serde_json::to_string_pretty(&self.dataset).expect("dataset serializes");
        std::fs::write(dir.join("qa.json"), qa + "\n")?;
        std::fs::write(dir.join("emb.emb1"), self.table.to_bytes())?;
        std::fs::write(dir.join("toy.conf"), TOY_CONFIG)
    }
}
