#![allow(dead_code)]

use fcqa_core::model::{FunctionContext, PreparedSample, PreparedStep};
use fcqa_core::{FeatureSet, GroundingMode, ModelConfig, ModelParams};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_config(features: FeatureSet, mode: GroundingMode) -> ModelConfig {
    let mut cfg = ModelConfig::new(8, 8, features, mode, 3);
    cfg.hidden = 8;
    cfg.mlp_hidden = 8;
    cfg
}

/// Parameters with every entry (biases and start vector included) drawn from uniform(-scale, scale).
pub fn random_params(cfg: &ModelConfig, rng: &mut ChaCha8Rng, scale: f64) -> ModelParams {
    let mut p = ModelParams::zeros(cfg);
    for (_, t) in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
    p
}

fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// A random sample with `n_functions` functions and `steps` steps of `m` candidates.
pub fn random_sample(
    cfg: &ModelConfig,
    rng: &mut ChaCha8Rng,
    n_functions: usize,
    steps: usize,
    m: usize,
) -> PreparedSample {
    let function_feats = matrix(rng, n_functions, cfg.function_dim());
    let context = match cfg.grounding_mode {
        GroundingMode::CrossAttention => FunctionContext::Attention(matrix(rng, n_functions, cfg.dim_t)),
        GroundingMode::Tfidf => {
            let raw: Vec<f64> = (0..n_functions).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            FunctionContext::Fixed(Array1::from(raw.into_iter().map(|w| w / total).collect::<Vec<_>>()))
        }
    };
    let question = Array1::from_shape_fn(cfg.dim_t, |_| rng.random_range(-1.0..1.0));
    let steps = (0..steps)
        .map(|_| PreparedStep { answers: matrix(rng, m, cfg.answer_dim()), gt_index: rng.random_range(0..m) })
        .collect();
    PreparedSample { function_feats, context, question, steps }
}

/// Worst elementwise disagreement between the analytic gradient and central
/// differences of the batch loss, over every parameter.
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`: relative for ordinary gradients,
/// absolute (scaled by `floor`) for gradients near zero where finite
/// differences only resolve rounding noise.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn gradient_check(
    cfg: &ModelConfig,
    params: &ModelParams,
    samples: &[PreparedSample],
    instances: &[(usize, usize)],
) -> GradCheck {
    use fcqa_core::model::{batch_gradients, AnswerFeed};
    let feed = AnswerFeed::TeacherForced;
    let (_, analytic) = batch_gradients(params, cfg, samples, instances, feed).unwrap();
    let analytic: Vec<(&'static str, Vec<f64>)> =
        analytic.tensors().into_iter().map(|(n, _, d)| (n, d.to_vec())).collect();

    let mut out = GradCheck { max_rel_err: 0.0, worst: String::new(), checked: 0 };
    let mut probe = params.clone();
    for (t, (name, grads)) in analytic.iter().enumerate() {
        for (k, &a) in grads.iter().enumerate() {
            let original = probe.tensors_mut()[t].1[k];
            probe.tensors_mut()[t].1[k] = original + FD_STEP;
            let plus = batch_gradients(&probe, cfg, samples, instances, feed).unwrap().0;
            probe.tensors_mut()[t].1[k] = original - FD_STEP;
            let minus = batch_gradients(&probe, cfg, samples, instances, feed).unwrap().0;
            probe.tensors_mut()[t].1[k] = original;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(a, numeric, GRAD_FLOOR);
            out.checked += 1;
            if err > out.max_rel_err {
                out.max_rel_err = err;
                out.worst = format!("{name}[{k}]: analytic {a:e}, numeric {numeric:e}");
            }
        }
    }
    out
}
