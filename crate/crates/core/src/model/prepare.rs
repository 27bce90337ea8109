//! Resolves embedding ids and grounding weights into dense per-sample arrays,
//! so training and inference never touch the embedding tables.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};

use super::{check_dim, CandidateAnswer, GroundingMode, ModelConfig, ModelError, QaDataset, QaSample};
use crate::embedding::{EmbeddingId, EmbeddingKind, EmbeddingSet};
use crate::grounding::{ground_text, FunctionWeights};
use crate::script::FunctionSet;

/// Where the per-function weights of a sample come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightsSource {
    /// Fixed TF-IDF grounding, optionally keeping only the `top_k` best functions.
    Tfidf { top_k: Option<usize> },
    /// Learned bilinear attention, trained with the model.
    CrossAttention,
}

impl WeightsSource {
    pub fn for_config(config: &ModelConfig, top_k: Option<usize>) -> Self {
        match config.grounding_mode {
            GroundingMode::Tfidf => WeightsSource::Tfidf { top_k },
            GroundingMode::CrossAttention => WeightsSource::CrossAttention,
        }
    }

    fn mode(self) -> GroundingMode {
        match self {
            WeightsSource::Tfidf { .. } => GroundingMode::Tfidf,
            WeightsSource::CrossAttention => GroundingMode::CrossAttention,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FunctionContext {
    Fixed(Array1<f64>),
    /// Function text embeddings (`n × dim_t`) scored against the question.
    Attention(Array2<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedStep {
    /// One row of enabled answer features per candidate.
    pub answers: Array2<f64>,
    pub gt_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    /// One row of enabled function features per function.
    pub function_feats: Array2<f64>,
    pub context: FunctionContext,
    pub question: Array1<f64>,
    pub steps: Vec<PreparedStep>,
}

fn lookup(table: &EmbeddingSet, id: &str, what: &str, dim: usize) -> Result<Vec<f64>, ModelError> {
    let v = table.get_f64(id)?;
    check_dim(format!("{what} `{id}`"), dim, v.len())?;
    Ok(v)
}

fn function_id(kind: EmbeddingKind, functions: &FunctionSet, local: &str) -> String {
    EmbeddingId::new(kind, functions.video_id.as_str(), local).to_string()
}

/// Rows of `[E_f^t, E_f^v]` (enabled parts only), one per function.
pub fn function_features(
    table: &EmbeddingSet,
    functions: &FunctionSet,
    config: &ModelConfig,
) -> Result<Array2<f64>, ModelError> {
    let mut out = Array2::zeros((functions.functions.len(), config.function_dim()));
    for (i, unit) in functions.functions.iter().enumerate() {
        let mut row = Vec::with_capacity(config.function_dim());
        if config.use_function_t {
            let id = function_id(EmbeddingKind::FunctionText, functions, &unit.function_id);
            row.extend(lookup(table, &id, "function text", config.dim_t)?);
        }
        if config.use_function_v {
            let id = function_id(EmbeddingKind::FunctionVisual, functions, &unit.function_id);
            row.extend(lookup(table, &id, "function clip", config.dim_v)?);
        }
        out.row_mut(i).assign(&Array1::from(row));
    }
    Ok(out)
}

fn function_text(table: &EmbeddingSet, functions: &FunctionSet, dim_t: usize) -> Result<Array2<f64>, ModelError> {
    let mut out = Array2::zeros((functions.functions.len(), dim_t));
    for (i, unit) in functions.functions.iter().enumerate() {
        let id = function_id(EmbeddingKind::FunctionText, functions, &unit.function_id);
        out.row_mut(i).assign(&Array1::from(lookup(table, &id, "function text", dim_t)?));
    }
    Ok(out)
}

/// Rows of `[E_a^t, E_a^v]` (enabled parts only), one per candidate.
///
/// Button ids are only read when the answer-visual feature is on.
pub fn answer_features(
    table: &EmbeddingSet,
    candidates: &[CandidateAnswer],
    config: &ModelConfig,
) -> Result<Array2<f64>, ModelError> {
    let mut out = Array2::zeros((candidates.len(), config.answer_dim()));
    for (j, cand) in candidates.iter().enumerate() {
        let mut row = Vec::with_capacity(config.answer_dim());
        if config.use_answer_t {
            row.extend(lookup(table, &cand.text_emb_id, "answer text", config.dim_t)?);
        }
        if config.use_answer_v {
            let id = cand.button_emb_id.as_deref().ok_or_else(|| {
                ModelError::MissingId(format!("button embedding of candidate `{}`", cand.text_emb_id))
            })?;
            row.extend(lookup(table, id, "answer button", config.dim_v)?);
        }
        out.row_mut(j).assign(&Array1::from(row));
    }
    Ok(out)
}

pub fn tfidf_weights(
    question: &str,
    functions: &FunctionSet,
    top_k: Option<usize>,
) -> Result<FunctionWeights, ModelError> {
    let texts: Vec<&str> = functions.functions.iter().map(|f| f.para_text.as_str()).collect();
    Ok(ground_text(question, &texts, top_k)?.0)
}

pub fn prepare_sample(
    sample: &QaSample,
    functions: &FunctionSet,
    source: WeightsSource,
    table: &EmbeddingSet,
    config: &ModelConfig,
) -> Result<PreparedSample, ModelError> {
    config.validate()?;
    if source.mode() != config.grounding_mode {
        return Err(ModelError::InvalidConfig(format!(
            "weights source {:?} does not match grounding mode {}",
            source, config.grounding_mode
        )));
    }
    if functions.functions.is_empty() {
        return Err(ModelError::InvalidDataset(format!("video `{}` has no functions", functions.video_id)));
    }
    let function_feats = function_features(table, functions, config)?;
    let context = match source {
        WeightsSource::Tfidf { top_k } => {
            FunctionContext::Fixed(Array1::from(tfidf_weights(&sample.question_text, functions, top_k)?.weights))
        }
        WeightsSource::CrossAttention => FunctionContext::Attention(function_text(table, functions, config.dim_t)?),
    };
    let question = Array1::from(lookup(table, &sample.question_emb_id, "question", config.dim_t)?);
    let steps = sample
        .steps
        .iter()
        .map(|step| {
            if step.gt_index >= step.candidates.len() {
                return Err(ModelError::IndexOutOfRange { index: step.gt_index, len: step.candidates.len() });
            }
            Ok(PreparedStep { answers: answer_features(table, &step.candidates, config)?, gt_index: step.gt_index })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PreparedSample { function_feats, context, question, steps })
}

pub fn prepare_dataset(
    dataset: &QaDataset,
    functions: &BTreeMap<String, FunctionSet>,
    source: WeightsSource,
    table: &EmbeddingSet,
    config: &ModelConfig,
) -> Result<Vec<PreparedSample>, ModelError> {
    dataset
        .samples
        .iter()
        .map(|sample| {
            let fs =
                functions.get(&sample.video_id).ok_or_else(|| ModelError::UnknownVideo(sample.video_id.clone()))?;
            prepare_sample(sample, fs, source, table, config)
        })
        .collect()
}
