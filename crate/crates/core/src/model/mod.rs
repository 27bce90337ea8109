//! Multi-step answer classifier.
//!
//! A sample's weighted function context, question embedding and the previous
//! step's answer feed a GRU; each candidate answer of a step is scored by a
//! two-layer MLP over `[hidden, context, question, answer]` and the step is
//! trained with softmax cross-entropy.

mod adam;
mod backward;
pub mod checkpoint;
mod forward;
mod params;
mod prepare;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingError;
use crate::grounding::GroundingError;

pub use adam::{adam_update, OptState};
pub use backward::{batch_gradients, sample_gradients};
pub use forward::{
    ce_loss, cross_attention_weights, forward_sample, fuse_context, gru_step, rank_candidates, score_candidates,
    softmax, AnswerFeed, SampleTrace, StepRunner, StepTrace,
};
pub use params::ModelParams;
pub use prepare::{
    answer_features, function_features, prepare_dataset, prepare_sample, FunctionContext, PreparedSample, PreparedStep,
    WeightsSource,
};
pub use train::{evaluate_prepared, predict_prepared, predict_steps, stream_rng, train, EpochLog, TrainOutcome};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("missing embedding `{0}`")]
    MissingId(String),
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch { what: String, expected: usize, actual: usize },
    #[error("index {index} out of range for {len} entries")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("no function set for video `{0}`")]
    UnknownVideo(String),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error(transparent)]
    Embedding(EmbeddingError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}

impl From<EmbeddingError> for ModelError {
    fn from(e: EmbeddingError) -> Self {
        match e {
            EmbeddingError::MissingId(id) => ModelError::MissingId(id),
            EmbeddingError::DimensionMismatch { expected, actual } => {
                ModelError::DimensionMismatch { what: "embedding".into(), expected, actual }
            }
            other => ModelError::Embedding(other),
        }
    }
}

pub(crate) fn check_dim(what: impl Into<String>, expected: usize, actual: usize) -> Result<(), ModelError> {
    if expected != actual {
        return Err(ModelError::DimensionMismatch { what: what.into(), expected, actual });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroundingMode {
    #[serde(rename = "cross-att")]
    CrossAttention,
    #[serde(rename = "tfidf")]
    Tfidf,
}

impl GroundingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GroundingMode::CrossAttention => "cross-att",
            GroundingMode::Tfidf => "tfidf",
        }
    }
}

impl fmt::Display for GroundingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroundingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tfidf" | "tf-idf" => Ok(GroundingMode::Tfidf),
            "cross-att" | "cross-attention" | "crossatt" => Ok(GroundingMode::CrossAttention),
            other => Err(format!("unknown grounding mode `{other}` (expected tfidf|cross-att)")),
        }
    }
}

/// Which function and answer features enter the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSet {
    pub function_t: bool,
    pub function_v: bool,
    pub answer_t: bool,
    pub answer_v: bool,
}

impl FeatureSet {
    pub const ALL: FeatureSet = FeatureSet { function_t: true, function_v: true, answer_t: true, answer_v: true };

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.function_t || self.function_v) {
            return Err(ModelError::InvalidConfig("at least one function feature (fT, fV) is required".into()));
        }
        if !(self.answer_t || self.answer_v) {
            return Err(ModelError::InvalidConfig("at least one answer feature (aT, aV) is required".into()));
        }
        Ok(())
    }

    /// Every combination with at least one function and one answer feature.
    pub fn valid_combinations() -> Vec<FeatureSet> {
        let mut out = Vec::new();
        for (function_t, function_v) in [(true, false), (false, true), (true, true)] {
            for (answer_t, answer_v) in [(true, false), (false, true), (true, true)] {
                out.push(FeatureSet { function_t, function_v, answer_t, answer_v });
            }
        }
        out
    }
}

impl Default for FeatureSet {
    fn default() -> Self {
        FeatureSet::ALL
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> =
            [(self.function_t, "fT"), (self.function_v, "fV"), (self.answer_t, "aT"), (self.answer_v, "aV")]
                .into_iter()
                .filter_map(|(on, name)| on.then_some(name))
                .collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for FeatureSet {
    type Err = String;

    /// Comma-separated subset of `fT,fV,aT,aV`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut set = FeatureSet { function_t: false, function_v: false, answer_t: false, answer_v: false };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "ft" => set.function_t = true,
                "fv" => set.function_v = true,
                "at" => set.answer_t = true,
                "av" => set.answer_v = true,
                other => return Err(format!("unknown feature `{other}` (expected fT,fV,aT,aV)")),
            }
        }
        set.validate().map_err(|e| e.to_string())?;
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim_t: usize,
    pub dim_v: usize,
    pub hidden: usize,
    pub mlp_hidden: usize,
    pub use_function_v: bool,
    pub use_function_t: bool,
    pub use_answer_v: bool,
    pub use_answer_t: bool,
    pub grounding_mode: GroundingMode,
    pub seed: u64,
}

impl ModelConfig {
    pub const DEFAULT_HIDDEN: usize = 256;
    pub const DEFAULT_MLP_HIDDEN: usize = 512;

    pub fn new(dim_t: usize, dim_v: usize, features: FeatureSet, grounding_mode: GroundingMode, seed: u64) -> Self {
        ModelConfig {
            dim_t,
            dim_v,
            hidden: Self::DEFAULT_HIDDEN,
            mlp_hidden: Self::DEFAULT_MLP_HIDDEN,
            use_function_v: features.function_v,
            use_function_t: features.function_t,
            use_answer_v: features.answer_v,
            use_answer_t: features.answer_t,
            grounding_mode,
            seed,
        }
    }

    pub fn features(&self) -> FeatureSet {
        FeatureSet {
            function_t: self.use_function_t,
            function_v: self.use_function_v,
            answer_t: self.use_answer_t,
            answer_v: self.use_answer_v,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.features().validate()?;
        if self.hidden == 0 || self.mlp_hidden == 0 {
            return Err(ModelError::InvalidConfig("hidden sizes must be positive".into()));
        }
        if self.dim_t == 0 || self.dim_v == 0 {
            return Err(ModelError::InvalidConfig("embedding dims must be positive".into()));
        }
        Ok(())
    }

    pub fn function_dim(&self) -> usize {
        self.use_function_t as usize * self.dim_t + self.use_function_v as usize * self.dim_v
    }

    pub fn answer_dim(&self) -> usize {
        self.use_answer_t as usize * self.dim_t + self.use_answer_v as usize * self.dim_v
    }

    /// GRU input: `[context, question, previous answer]`.
    pub fn gru_input_dim(&self) -> usize {
        self.function_dim() + self.dim_t + self.answer_dim()
    }

    /// MLP input: `[hidden, context, question, candidate]`.
    pub fn mlp_input_dim(&self) -> usize {
        self.hidden + self.function_dim() + self.dim_t + self.answer_dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub teacher_forcing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            epochs: 100,
            batch_size: 16,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            teacher_forcing: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(ModelError::InvalidConfig(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ModelError::InvalidConfig("epochs and batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAnswer {
    pub text_emb_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub button_emb_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub candidates: Vec<CandidateAnswer>,
    pub gt_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaSample {
    pub video_id: String,
    pub question_text: String,
    pub question_emb_id: String,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QaDataset {
    pub samples: Vec<QaSample>,
}

impl QaDataset {
    pub fn from_json(bytes: &[u8]) -> Result<Self, ModelError> {
        let ds: QaDataset = serde_json::from_slice(bytes).map_err(|e| ModelError::InvalidDataset(e.to_string()))?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (s, sample) in self.samples.iter().enumerate() {
            if sample.steps.is_empty() {
                return Err(ModelError::InvalidDataset(format!("sample {s} has no steps")));
            }
            for (i, step) in sample.steps.iter().enumerate() {
                if step.candidates.len() < 2 {
                    return Err(ModelError::InvalidDataset(format!(
                        "sample {s} step {i}: needs at least 2 candidates"
                    )));
                }
                if step.gt_index >= step.candidates.len() {
                    return Err(ModelError::InvalidDataset(format!(
                        "sample {s} step {i}: gt_index {} out of range",
                        step.gt_index
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn step_count(&self) -> usize {
        self.samples.iter().map(|s| s.steps.len()).sum()
    }
}
