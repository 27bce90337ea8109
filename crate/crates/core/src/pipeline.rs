//! End-to-end orchestration shared by the command line and the ablation runner.
//!
//! Run settings come from a flat `key = value` config file, overridden by
//! command-line flags through the same [`RunConfig::set`] path.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{load_embeddings, EmbeddingError, EmbeddingId, EmbeddingKind, EmbeddingSet};
use crate::grounding::GroundingError;
use crate::metrics::{MetricReport, MetricsError};
use crate::model::checkpoint::CheckpointError;
use crate::model::{
    evaluate_prepared, prepare_dataset, train, EpochLog, FeatureSet, GroundingMode, ModelConfig, ModelError,
    ModelParams, PreparedSample, QaDataset, QaSample, TrainConfig, WeightsSource,
};
use crate::script::{parse_script, segment_script, FunctionSet, Script, ScriptError, SegmentationMode};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{context}: {source}")]
    Context { context: String, source: Box<PipelineError> },
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid JSON in {path}: {message}")]
    Json { path: PathBuf, message: String },
}

fn variant_name<T: fmt::Debug>(value: &T) -> String {
    let debug = format!("{value:?}");
    match debug.split(|c: char| !c.is_alphanumeric() && c != '_').next().unwrap_or_default() {
        "Io" => "IoError".into(),
        name => name.into(),
    }
}

impl PipelineError {
    /// Name of the innermost error variant, e.g. `DimensionMismatch`.
    pub fn kind(&self) -> String {
        match self {
            PipelineError::Config(_) => "ConfigError".into(),
            PipelineError::Io { .. } => "IoError".into(),
            PipelineError::Json { .. } => "JsonError".into(),
            PipelineError::Context { source, .. } => source.kind(),
            PipelineError::Script(e) => variant_name(e),
            PipelineError::Grounding(e) => variant_name(e),
            PipelineError::Embedding(e) => variant_name(e),
            PipelineError::Model(ModelError::Embedding(e)) => variant_name(e),
            PipelineError::Model(ModelError::Grounding(e)) => variant_name(e),
            PipelineError::Model(ModelError::Metrics(e)) => variant_name(e),
            PipelineError::Model(e) => variant_name(e),
            PipelineError::Checkpoint(e) => variant_name(e),
            PipelineError::Metrics(e) => variant_name(e),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        PipelineError::Context { context: context.into(), source: Box::new(self) }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, PipelineError> {
    std::fs::read(path).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| PipelineError::Io { path: parent.to_path_buf(), source })?;
    }
    std::fs::write(path, bytes).map_err(|source| PipelineError::Io { path: path.to_path_buf(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    write_file(path, text)
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let entries = std::fs::read_dir(dir).map_err(|source| PipelineError::Io { path: dir.to_path_buf(), source })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_script(path: &Path) -> Result<Script, PipelineError> {
    parse_script(&read(path)?).map_err(|e| PipelineError::from(e).context(path.display().to_string()))
}

/// Every `*.json` script in `dir`, in file-name order.
pub fn load_scripts(dir: &Path) -> Result<Vec<Script>, PipelineError> {
    json_files(dir)?.iter().map(|p| load_script(p)).collect()
}

pub fn segment_scripts(
    scripts: &[Script],
    mode: SegmentationMode,
) -> Result<BTreeMap<String, FunctionSet>, PipelineError> {
    scripts.iter().map(|s| Ok((s.video_id.clone(), segment_script(s, mode)?))).collect()
}

pub fn load_function_set(path: &Path) -> Result<FunctionSet, PipelineError> {
    serde_json::from_slice(&read(path)?).map_err(|e| PipelineError::Json { path: path.into(), message: e.to_string() })
}

/// Function sets keyed by video id, from a single `functions.json` or every
/// `*.json` file in a directory.
pub fn load_function_sets(path: &Path) -> Result<BTreeMap<String, FunctionSet>, PipelineError> {
    if path.is_file() {
        let set = load_function_set(path)?;
        return Ok(BTreeMap::from([(set.video_id.clone(), set)]));
    }
    json_files(path)?.iter().map(|p| load_function_set(p).map(|fs| (fs.video_id.clone(), fs))).collect()
}

pub fn write_function_sets(dir: &Path, sets: &BTreeMap<String, FunctionSet>) -> Result<(), PipelineError> {
    for (video, set) in sets {
        write_json(&dir.join(format!("{video}.json")), set)?;
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<QaDataset, PipelineError> {
    QaDataset::from_json(&read(path)?).map_err(|e| PipelineError::from(e).context(path.display().to_string()))
}

pub fn load_embedding_set(paths: &[PathBuf]) -> Result<EmbeddingSet, PipelineError> {
    let tables = paths
        .iter()
        .map(|p| load_embeddings(p).map_err(|e| PipelineError::from(e).context(p.display().to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EmbeddingSet::new(tables))
}

/// Text and visual widths: the question embedding's length, and the first
/// visual embedding found (clip or button), defaulting to the text width.
pub fn infer_dims(
    dataset: &QaDataset,
    functions: &BTreeMap<String, FunctionSet>,
    table: &EmbeddingSet,
) -> Result<(usize, usize), PipelineError> {
    let sample = dataset.samples.first().ok_or(ModelError::EmptyDataset)?;
    let dim_t = table.get_raw(&sample.question_emb_id).map_err(ModelError::from)?.len();
    let clip = functions.get(&sample.video_id).and_then(|fs| fs.functions.first()).map(|f| {
        EmbeddingId::new(EmbeddingKind::FunctionVisual, sample.video_id.as_str(), f.function_id.as_str()).to_string()
    });
    let button = sample.steps.first().and_then(|s| s.candidates.first()).and_then(|c| c.button_emb_id.clone());
    let dim_v =
        clip.into_iter().chain(button).find_map(|id| table.get_raw(&id).ok().map(<[f32]>::len)).unwrap_or(dim_t);
    Ok((dim_t, dim_v))
}

/// Looks up the sample for a video whose question matches `question` (case and
/// surrounding whitespace ignored).
pub fn find_sample<'a>(dataset: &'a QaDataset, video: &str, question: &str) -> Option<&'a QaSample> {
    let wanted = question.trim().to_lowercase();
    dataset.samples.iter().find(|s| s.video_id == video && s.question_text.trim().to_lowercase() == wanted)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationAxis {
    Segmentation,
    Grounding,
    Features,
}

impl FromStr for AblationAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "segmentation" | "seg" => Ok(AblationAxis::Segmentation),
            "grounding" => Ok(AblationAxis::Grounding),
            "features" | "feat" => Ok(AblationAxis::Features),
            other => Err(format!("unknown ablation axis `{other}` (expected segmentation|grounding|features)")),
        }
    }
}

/// The function/answer feature rows compared by default on the feature axis.
pub fn default_feature_sets() -> Vec<FeatureSet> {
    vec![
        FeatureSet { function_t: true, function_v: true, answer_t: true, answer_v: false },
        FeatureSet { function_t: true, function_v: false, answer_t: true, answer_v: true },
        FeatureSet::ALL,
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub script_dir: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub functions_dir: Option<PathBuf>,
    pub emb: Vec<PathBuf>,
    pub ckpt: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub mode: SegmentationMode,
    pub grounding: GroundingMode,
    pub features: FeatureSet,
    pub top_k: Option<usize>,
    pub seed: u64,
    pub hidden: usize,
    pub mlp_hidden: usize,
    pub train: TrainConfig,
    pub axes: Vec<AblationAxis>,
    pub feature_sets: Vec<FeatureSet>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            script_dir: None,
            data: None,
            eval_data: None,
            functions_dir: None,
            emb: Vec::new(),
            ckpt: None,
            out: None,
            mode: SegmentationMode::FunctionCentric,
            grounding: GroundingMode::Tfidf,
            features: FeatureSet::ALL,
            top_k: None,
            seed: 0,
            hidden: ModelConfig::DEFAULT_HIDDEN,
            mlp_hidden: ModelConfig::DEFAULT_MLP_HIDDEN,
            train: TrainConfig::default(),
            axes: Vec::new(),
            feature_sets: default_feature_sets(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, PipelineError>
where
    T::Err: fmt::Display,
{
    value.trim().parse().map_err(|e| PipelineError::Config(format!("{key} = {value}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str, sep: char) -> Result<Vec<T>, PipelineError>
where
    T::Err: fmt::Display,
{
    value.split(sep).map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, PipelineError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(PipelineError::Config(format!("{key}: `{other}` is not a boolean"))),
    }
}

const PATH_KEYS: [&str; 9] =
    ["script_dir", "scripts", "data", "eval_data", "functions", "functions_dir", "emb", "ckpt", "out"];

/// `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, PipelineError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| PipelineError::Config(format!("line {}: expected `key = value`", n + 1)))?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let path = || Some(PathBuf::from(value.trim()));
        match key.trim().replace('-', "_").as_str() {
            "script_dir" | "scripts" => self.script_dir = path(),
            "data" => self.data = path(),
            "eval_data" => self.eval_data = path(),
            "functions" | "functions_dir" => self.functions_dir = path(),
            "emb" => self.emb = value.split(',').map(|p| PathBuf::from(p.trim())).collect(),
            "ckpt" => self.ckpt = path(),
            "out" => self.out = path(),
            "mode" | "segmentation" => self.mode = parse(key, value)?,
            "grounding" => self.grounding = parse(key, value)?,
            "feat" | "features" => self.features = parse(key, value)?,
            "top_k" => {
                self.top_k = match value.trim() {
                    "" | "none" => None,
                    v => Some(parse::<usize>(key, v)?).filter(|&k| k > 0),
                }
            }
            "seed" => self.seed = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "mlp_hidden" => self.mlp_hidden = parse(key, value)?,
            "lr" => self.train.lr = parse(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "beta1" => self.train.beta1 = parse(key, value)?,
            "beta2" => self.train.beta2 = parse(key, value)?,
            "eps" => self.train.eps = parse(key, value)?,
            "teacher_forcing" => self.train.teacher_forcing = parse_bool(key, value)?,
            "axes" => self.axes = parse_list(key, value, ',')?,
            "feature_sets" => self.feature_sets = parse_list(key, value, ';')?,
            other => return Err(PipelineError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn apply_kv_text(&mut self, text: &str) -> Result<(), PipelineError> {
        for (k, v) in parse_kv(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Applies a config file; relative paths in it resolve against the file's directory.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), PipelineError> {
        let text =
            String::from_utf8(read(path)?).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for (key, value) in parse_kv(&text)? {
            let value = if PATH_KEYS.contains(&key.replace('-', "_").as_str()) {
                value.split(',').map(|p| base.join(p.trim()).display().to_string()).collect::<Vec<_>>().join(",")
            } else {
                value
            };
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, PipelineError> {
        field.as_deref().ok_or_else(|| PipelineError::Config(format!("missing required setting `{name}`")))
    }

    pub fn require_emb(&self) -> Result<&[PathBuf], PipelineError> {
        if self.emb.is_empty() {
            return Err(PipelineError::Config("missing required setting `emb`".into()));
        }
        Ok(&self.emb)
    }

    pub fn model_config(&self, dim_t: usize, dim_v: usize) -> Result<ModelConfig, PipelineError> {
        let mut cfg = ModelConfig::new(dim_t, dim_v, self.features, self.grounding, self.seed);
        cfg.hidden = self.hidden;
        cfg.mlp_hidden = self.mlp_hidden;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Function sets from `functions_dir`, or else by segmenting `script_dir` with `mode`.
    pub fn function_sets(&self) -> Result<BTreeMap<String, FunctionSet>, PipelineError> {
        match (&self.functions_dir, &self.script_dir) {
            (Some(dir), _) => load_function_sets(dir),
            (None, Some(dir)) => segment_scripts(&load_scripts(dir)?, self.mode),
            (None, None) => Err(PipelineError::Config("need `functions` or `script_dir`".into())),
        }
    }
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub report: MetricReport,
}

impl RunResult {
    pub fn final_loss(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |e| e.loss)
    }
}

pub fn prepare(
    dataset: &QaDataset,
    functions: &BTreeMap<String, FunctionSet>,
    table: &EmbeddingSet,
    config: &ModelConfig,
    top_k: Option<usize>,
) -> Result<Vec<PreparedSample>, PipelineError> {
    Ok(prepare_dataset(dataset, functions, WeightsSource::for_config(config, top_k), table, config)?)
}

/// Trains on `dataset` and reports the best epoch on `eval` (or on `dataset` itself).
pub fn run_training(
    cfg: &RunConfig,
    dataset: &QaDataset,
    eval: Option<&QaDataset>,
    functions: &BTreeMap<String, FunctionSet>,
    table: &EmbeddingSet,
) -> Result<RunResult, PipelineError> {
    let (dim_t, dim_v) = infer_dims(dataset, functions, table)?;
    let config = cfg.model_config(dim_t, dim_v)?;
    let train_set = prepare(dataset, functions, table, &config, cfg.top_k)?;
    let eval_set = eval.map(|ds| prepare(ds, functions, table, &config, cfg.top_k)).transpose()?;
    let outcome = train(&train_set, eval_set.as_deref(), &config, &cfg.train)?;
    let report = outcome.best().eval.clone();
    Ok(RunResult { config, params: outcome.params, log: outcome.log, best_epoch: outcome.best_epoch, report })
}

pub fn evaluate_checkpoint(
    config: &ModelConfig,
    params: &ModelParams,
    dataset: &QaDataset,
    functions: &BTreeMap<String, FunctionSet>,
    table: &EmbeddingSet,
    top_k: Option<usize>,
) -> Result<MetricReport, PipelineError> {
    params.check_shapes(config)?;
    let prepared = prepare(dataset, functions, table, config, top_k)?;
    Ok(evaluate_prepared(params, config, &prepared)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub segmentation: SegmentationMode,
    pub grounding: GroundingMode,
    pub features: String,
    pub best_epoch: usize,
    pub final_loss: f64,
    #[serde(flatten)]
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axes: Vec<AblationAxis>,
    pub rows: Vec<AblationRow>,
}

fn checks(on: bool) -> &'static str {
    if on {
        "✓"
    } else {
        "✗"
    }
}

impl AblationTable {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| Segmentation | Grounding | Functions V T | Answers V T | R@1 | R@3 | MR | MRR |\n\
             |---|---|---|---|---|---|---|---|\n",
        );
        for row in &self.rows {
            let f: FeatureSet = row.features.parse().expect("row features were formatted from a FeatureSet");
            out.push_str(&format!(
                "| {}-centric | {} | {} {} | {} {} | {:.1} | {:.1} | {:.2} | {:.3} |\n",
                row.segmentation,
                match row.grounding {
                    GroundingMode::CrossAttention => "cross-att.",
                    GroundingMode::Tfidf => "TF-IDF",
                },
                checks(f.function_v),
                checks(f.function_t),
                checks(f.answer_v),
                checks(f.answer_t),
                row.report.r_at_1,
                row.report.r_at_3,
                row.report.mr,
                row.report.mrr,
            ));
        }
        out
    }
}

/// Loaded inputs an ablation needs; cells share them read-only.
pub struct AblationInputs {
    pub scripts: Vec<Script>,
    pub dataset: QaDataset,
    pub eval: Option<QaDataset>,
    pub table: EmbeddingSet,
}

impl AblationInputs {
    pub fn load(cfg: &RunConfig) -> Result<Self, PipelineError> {
        Ok(AblationInputs {
            scripts: load_scripts(cfg.require(&cfg.script_dir, "script_dir")?)?,
            dataset: load_dataset(cfg.require(&cfg.data, "data")?)?,
            eval: cfg.eval_data.as_deref().map(load_dataset).transpose()?,
            table: load_embedding_set(cfg.require_emb()?)?,
        })
    }
}

/// Trains and evaluates every combination of the requested axes with the same
/// seed. Rows are ordered segmentation (sentence, function), then grounding
/// (cross-attention, TF-IDF), then feature set; axes not requested keep the
/// value from `cfg`.
pub fn ablation_matrix(
    cfg: &RunConfig,
    inputs: &AblationInputs,
    axes: &[AblationAxis],
) -> Result<AblationTable, PipelineError> {
    let modes = if axes.contains(&AblationAxis::Segmentation) {
        vec![SegmentationMode::SentenceCentric, SegmentationMode::FunctionCentric]
    } else {
        vec![cfg.mode]
    };
    let groundings = if axes.contains(&AblationAxis::Grounding) {
        vec![GroundingMode::CrossAttention, GroundingMode::Tfidf]
    } else {
        vec![cfg.grounding]
    };
    let feature_sets =
        if axes.contains(&AblationAxis::Features) { cfg.feature_sets.clone() } else { vec![cfg.features] };
    if feature_sets.is_empty() {
        return Err(PipelineError::Config("feature axis has no feature sets".into()));
    }

    let mut cells = Vec::new();
    for &mode in &modes {
        for &grounding in &groundings {
            for &features in &feature_sets {
                cells.push((mode, grounding, features));
            }
        }
    }
    let function_sets: BTreeMap<SegmentationMode, BTreeMap<String, FunctionSet>> =
        modes.iter().map(|&m| Ok((m, segment_scripts(&inputs.scripts, m)?))).collect::<Result<_, PipelineError>>()?;

    let rows = cells
        .par_iter()
        .map(|&(mode, grounding, features)| {
            let mut cell = cfg.clone();
            cell.mode = mode;
            cell.grounding = grounding;
            cell.features = features;
            let result =
                run_training(&cell, &inputs.dataset, inputs.eval.as_ref(), &function_sets[&mode], &inputs.table)
                    .map_err(|e| e.context(format!("cell {mode}/{grounding}/{features}")))?;
            Ok(AblationRow {
                segmentation: mode,
                grounding,
                features: features.to_string(),
                best_epoch: result.best_epoch,
                final_loss: result.final_loss(),
                report: result.report,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(AblationTable { axes: axes.to_vec(), rows })
}
