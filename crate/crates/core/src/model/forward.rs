use ndarray::{concatenate, Array1, Array2, Axis};

use super::prepare::{FunctionContext, PreparedSample};
use super::{check_dim, ModelConfig, ModelError, ModelParams};
use crate::embedding::EmbeddingSet;
use crate::grounding::FunctionWeights;
use crate::script::FunctionSet;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-ln p[gt]`.
pub fn ce_loss(probs: &[f64], gt_index: usize) -> Result<f64, ModelError> {
    let p = probs.get(gt_index).ok_or(ModelError::IndexOutOfRange { index: gt_index, len: probs.len() })?;
    Ok(-p.ln())
}

/// Candidate indices by descending probability, ties to the lower index.
pub fn rank_candidates(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    order
}

/// `Σ_i w_i · [E_f^t_i, E_f^v_i]` over the enabled features.
pub fn fuse_context(
    weights: &FunctionWeights,
    table: &EmbeddingSet,
    functions: &FunctionSet,
    config: &ModelConfig,
) -> Result<Array1<f64>, ModelError> {
    check_dim("function weights", functions.functions.len(), weights.len())?;
    let feats = super::prepare::function_features(table, functions, config)?;
    Ok(Array1::from(weights.weights.clone()).dot(&feats))
}

fn attention_scores(w_att: &Array2<f64>, question: &Array1<f64>, function_text: &Array2<f64>) -> Array1<f64> {
    // score_i = qᵀ W f_i
    function_text.dot(&question.dot(w_att))
}

/// Softmax over `qᵀ W_att f_i` for every function text embedding `f_i`.
pub fn cross_attention_weights(
    params: &ModelParams,
    question: &Array1<f64>,
    function_text: &Array2<f64>,
) -> Result<FunctionWeights, ModelError> {
    let w_att = params
        .w_att
        .as_ref()
        .ok_or_else(|| ModelError::InvalidConfig("cross-attention weights are not initialized".into()))?;
    check_dim("question", w_att.nrows(), question.len())?;
    check_dim("function text", w_att.ncols(), function_text.ncols())?;
    let scores = attention_scores(w_att, question, function_text);
    Ok(FunctionWeights { weights: softmax(scores.as_slice().expect("contiguous")) })
}

#[derive(Debug, Clone)]
pub(crate) struct GruCache {
    pub x: Array1<f64>,
    pub h_prev: Array1<f64>,
    pub z: Array1<f64>,
    pub r: Array1<f64>,
    pub h_cand: Array1<f64>,
}

pub(crate) fn gru_forward(params: &ModelParams, h_prev: &Array1<f64>, x: &Array1<f64>) -> (Array1<f64>, GruCache) {
    let z = (params.w_z.dot(x) + params.u_z.dot(h_prev) + &params.b_z).mapv(sigmoid);
    let r = (params.w_r.dot(x) + params.u_r.dot(h_prev) + &params.b_r).mapv(sigmoid);
    let h_cand = (params.w_h.dot(x) + params.u_h.dot(&(&r * h_prev)) + &params.b_h).mapv(f64::tanh);
    let h = (1.0 - &z) * h_prev + &z * &h_cand;
    (h, GruCache { x: x.clone(), h_prev: h_prev.clone(), z, r, h_cand })
}

/// One GRU update `h = (1 - z)·h_prev + z·tanh(W_h x + U_h (r·h_prev) + b_h)`.
pub fn gru_step(params: &ModelParams, h_prev: &Array1<f64>, x: &Array1<f64>) -> Result<Array1<f64>, ModelError> {
    check_dim("hidden state", params.u_z.ncols(), h_prev.len())?;
    check_dim("GRU input", params.w_z.ncols(), x.len())?;
    Ok(gru_forward(params, h_prev, x).0)
}

#[derive(Debug, Clone)]
pub(crate) struct MlpCache {
    /// `m × mlp_input_dim`, one row per candidate.
    pub input: Array2<f64>,
    pub pre: Array2<f64>,
    pub act: Array2<f64>,
}

pub(crate) fn mlp_forward(
    params: &ModelParams,
    h: &Array1<f64>,
    context: &Array1<f64>,
    question: &Array1<f64>,
    answers: &Array2<f64>,
) -> (Array1<f64>, MlpCache) {
    let m = answers.nrows();
    let shared = concatenate![Axis(0), *h, *context, *question];
    let shared = shared.broadcast((m, shared.len())).expect("broadcast rows");
    let input = concatenate![Axis(1), shared, *answers];
    let pre = input.dot(&params.mlp_w1.t()) + &params.mlp_b1;
    let act = pre.mapv(|v| v.max(0.0));
    let logits = act.dot(&params.mlp_w2) + params.mlp_b2[0];
    (logits, MlpCache { input, pre, act })
}

/// Logits of every candidate row in `answers` given the step's hidden state.
pub fn score_candidates(
    params: &ModelParams,
    config: &ModelConfig,
    h: &Array1<f64>,
    context: &Array1<f64>,
    question: &Array1<f64>,
    answers: &Array2<f64>,
) -> Result<Array1<f64>, ModelError> {
    check_dim("hidden state", config.hidden, h.len())?;
    check_dim("context", config.function_dim(), context.len())?;
    check_dim("question", config.dim_t, question.len())?;
    check_dim("answer features", config.answer_dim(), answers.ncols())?;
    check_dim("MLP input", params.mlp_w1.ncols(), config.mlp_input_dim())?;
    Ok(mlp_forward(params, h, context, question, answers).0)
}

/// What the GRU sees as the previous answer from the second step on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerFeed {
    /// The ground-truth answer of the previous step.
    TeacherForced,
    /// The model's own top-1 answer of the previous step.
    Predicted,
}

#[derive(Debug, Clone)]
pub struct StepTrace {
    pub(crate) gru: GruCache,
    pub(crate) mlp: MlpCache,
    pub h: Array1<f64>,
    pub probs: Vec<f64>,
    /// Candidate row fed forward as the previous answer of the next step.
    pub fed_answer: usize,
}

#[derive(Debug, Clone)]
pub struct SampleTrace {
    pub weights: Array1<f64>,
    pub context: Array1<f64>,
    pub steps: Vec<StepTrace>,
}

impl SampleTrace {
    pub fn loss(&self, sample: &PreparedSample, step_weights: &[f64]) -> f64 {
        self.steps
            .iter()
            .zip(step_weights)
            .zip(&sample.steps)
            .map(|((st, &w), step)| if w == 0.0 { 0.0 } else { -w * st.probs[step.gt_index].ln() })
            .sum()
    }
}

pub(crate) fn sample_context(
    params: &ModelParams,
    sample: &PreparedSample,
) -> Result<(Array1<f64>, Array1<f64>), ModelError> {
    let weights = match &sample.context {
        FunctionContext::Fixed(w) => w.clone(),
        FunctionContext::Attention(text) => {
            Array1::from(cross_attention_weights(params, &sample.question, text)?.weights)
        }
    };
    check_dim("function weights", sample.function_feats.nrows(), weights.len())?;
    let context = weights.dot(&sample.function_feats);
    Ok((weights, context))
}

fn gru_input(context: &Array1<f64>, question: &Array1<f64>, prev: &Array1<f64>) -> Array1<f64> {
    concatenate![Axis(0), *context, *question, *prev]
}

/// Runs the first `n_steps` steps of a sample, recording everything the backward pass needs.
pub fn forward_sample(
    params: &ModelParams,
    config: &ModelConfig,
    sample: &PreparedSample,
    n_steps: usize,
    feed: AnswerFeed,
) -> Result<SampleTrace, ModelError> {
    let n_steps = n_steps.min(sample.steps.len());
    let (weights, context) = sample_context(params, sample)?;
    check_dim("context", config.function_dim(), context.len())?;
    check_dim("question", config.dim_t, sample.question.len())?;

    let mut h = Array1::zeros(config.hidden);
    let mut prev = params.start_answer.clone();
    let mut steps = Vec::with_capacity(n_steps);
    for step in &sample.steps[..n_steps] {
        check_dim("answer features", config.answer_dim(), step.answers.ncols())?;
        let x = gru_input(&context, &sample.question, &prev);
        let (h_next, gru) = gru_forward(params, &h, &x);
        let (logits, mlp) = mlp_forward(params, &h_next, &context, &sample.question, &step.answers);
        let probs = softmax(logits.as_slice().expect("contiguous"));
        let fed_answer = match feed {
            AnswerFeed::TeacherForced => step.gt_index,
            AnswerFeed::Predicted => rank_candidates(&probs)[0],
        };
        prev = step.answers.row(fed_answer).to_owned();
        h = h_next.clone();
        steps.push(StepTrace { gru, mlp, h: h_next, probs, fed_answer });
    }
    Ok(SampleTrace { weights, context, steps })
}

/// Step-by-step inference where the caller picks the answer fed into the next step.
pub struct StepRunner<'a> {
    params: &'a ModelParams,
    sample: &'a PreparedSample,
    weights: Array1<f64>,
    context: Array1<f64>,
    h: Array1<f64>,
    step: usize,
}

impl<'a> StepRunner<'a> {
    pub fn new(params: &'a ModelParams, config: &ModelConfig, sample: &'a PreparedSample) -> Result<Self, ModelError> {
        let (weights, context) = sample_context(params, sample)?;
        check_dim("context", config.function_dim(), context.len())?;
        check_dim("question", config.dim_t, sample.question.len())?;
        check_dim("MLP input", params.mlp_w1.ncols(), config.mlp_input_dim())?;
        for step in &sample.steps {
            check_dim("answer features", config.answer_dim(), step.answers.ncols())?;
        }
        let x = gru_input(&context, &sample.question, &params.start_answer);
        let h = gru_forward(params, &Array1::zeros(config.hidden), &x).0;
        Ok(StepRunner { params, sample, weights, context, h, step: 0 })
    }

    pub fn function_weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn current_step(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.sample.steps.len()
    }

    /// Probabilities of the current step's candidates.
    pub fn probabilities(&self) -> Option<Vec<f64>> {
        let step = self.sample.steps.get(self.step)?;
        let (logits, _) = mlp_forward(self.params, &self.h, &self.context, &self.sample.question, &step.answers);
        Some(softmax(logits.as_slice().expect("contiguous")))
    }

    pub fn rank(&self) -> Option<Vec<usize>> {
        self.probabilities().map(|p| rank_candidates(&p))
    }

    /// Feeds `chosen` as the previous answer and moves to the next step.
    pub fn advance(&mut self, chosen: usize) -> Result<(), ModelError> {
        let step = self
            .sample
            .steps
            .get(self.step)
            .ok_or(ModelError::IndexOutOfRange { index: self.step, len: self.sample.steps.len() })?;
        if chosen >= step.answers.nrows() {
            return Err(ModelError::IndexOutOfRange { index: chosen, len: step.answers.nrows() });
        }
        let prev = step.answers.row(chosen).to_owned();
        self.step += 1;
        if !self.is_done() {
            let x = gru_input(&self.context, &self.sample.question, &prev);
            self.h = gru_forward(self.params, &self.h, &x).0;
        }
        Ok(())
    }
}
