//! Deterministic workloads shared by the benchmarks.

use fcqa_core::model::{stream_rng, FunctionContext, PreparedSample, PreparedStep};
use fcqa_core::ModelConfig;
use ndarray::{Array1, Array2};
use rand::Rng;

const WORDS: [&str; 24] = [
    "press",
    "turn",
    "the",
    "button",
    "knob",
    "clockwise",
    "start",
    "stop",
    "timer",
    "minute",
    "defrost",
    "fish",
    "power",
    "grill",
    "bake",
    "dial",
    "set",
    "hold",
    "twice",
    "seconds",
    "door",
    "open",
    "light",
    "reheat",
];

/// A question and `n` function paragraphs of 20 to 40 words each.
pub fn function_paras(n: usize, seed: u64) -> (String, Vec<String>) {
    let mut rng = stream_rng(seed, 0);
    let mut sentence = |len: usize| -> String {
        (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
    };
    let question = format!("How to {}?", sentence(6));
    let paras = (0..n).map(|_| format!("How to {}? {}.", sentence(5), sentence(25))).collect();
    (question, paras)
}

/// A prepared sample with random features sized for `config`.
pub fn random_sample(
    config: &ModelConfig,
    functions: usize,
    steps: usize,
    candidates: usize,
    seed: u64,
) -> PreparedSample {
    let mut rng = stream_rng(seed, 0);
    let mut matrix = |rows: usize, cols: usize| Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0));
    let function_feats = matrix(functions, config.function_dim());
    let context = match config.grounding_mode {
        fcqa_core::GroundingMode::CrossAttention => FunctionContext::Attention(matrix(functions, config.dim_t)),
        fcqa_core::GroundingMode::Tfidf => FunctionContext::Fixed(Array1::from_elem(functions, 1.0 / functions as f64)),
    };
    let question = matrix(1, config.dim_t).row(0).to_owned();
    let steps = (0..steps)
        .map(|i| PreparedStep { answers: matrix(candidates, config.answer_dim()), gt_index: i % candidates })
        .collect();
    PreparedSample { function_feats, context, question, steps }
}
