//! Function-centric question answering over instructional videos.
//!
//! The pipeline segments a video's script into function units, grounds a
//! question onto them with TF-IDF similarity, and ranks the candidate answers
//! of every step with a GRU + MLP classifier trained over precomputed
//! embeddings.

pub mod embedding;
pub mod grounding;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod script;
pub mod toy;

pub use embedding::{load_embeddings, save_embeddings, EmbeddingId, EmbeddingSet, EmbeddingTable};
pub use grounding::{FunctionWeights, TfidfModel, TokenList};
pub use metrics::{MetricReport, RankRecord};
pub use model::{FeatureSet, GroundingMode, ModelConfig, ModelParams, QaDataset, QaSample, TrainConfig};
pub use script::{FunctionSet, FunctionUnit, Script, SegmentationMode};
