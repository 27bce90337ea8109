use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_update, OptState};
use super::backward::batch_gradients;
use super::forward::{AnswerFeed, StepRunner};
use super::prepare::{prepare_sample, PreparedSample, WeightsSource};
use super::{ModelConfig, ModelError, ModelParams, QaSample, TrainConfig};
use crate::embedding::EmbeddingSet;
use crate::metrics::{MetricReport, RankRecord};
use crate::script::FunctionSet;

/// Generator stream used for parameter initialization.
pub const INIT_STREAM: u64 = 0;
/// Generator stream used for per-epoch shuffling.
pub const SHUFFLE_STREAM: u64 = 1;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's step-instances.
    pub loss: f64,
    pub eval: MetricReport,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best evaluation epoch.
    pub params: ModelParams,
    pub final_params: ModelParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

impl TrainOutcome {
    pub fn best(&self) -> &EpochLog {
        &self.log[self.best_epoch]
    }

    pub fn final_loss(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |e| e.loss)
    }
}

/// Rankings for every step, feeding the model's own top-1 answer forward.
pub fn predict_prepared(
    params: &ModelParams,
    config: &ModelConfig,
    sample: &PreparedSample,
) -> Result<Vec<Vec<usize>>, ModelError> {
    let mut runner = StepRunner::new(params, config, sample)?;
    let mut out = Vec::with_capacity(sample.steps.len());
    while let Some(ranking) = runner.rank() {
        runner.advance(ranking[0])?;
        out.push(ranking);
    }
    Ok(out)
}

pub fn predict_steps(
    params: &ModelParams,
    config: &ModelConfig,
    sample: &QaSample,
    functions: &FunctionSet,
    source: WeightsSource,
    table: &EmbeddingSet,
) -> Result<Vec<Vec<usize>>, ModelError> {
    predict_prepared(params, config, &prepare_sample(sample, functions, source, table, config)?)
}

pub fn evaluate_prepared(
    params: &ModelParams,
    config: &ModelConfig,
    samples: &[PreparedSample],
) -> Result<MetricReport, ModelError> {
    let mut records = Vec::new();
    for sample in samples {
        for (ranking, step) in predict_prepared(params, config, sample)?.iter().zip(&sample.steps) {
            let pos = ranking.iter().position(|&c| c == step.gt_index).expect("ranking is a permutation");
            records.push(RankRecord::new(pos + 1, ranking.len())?);
        }
    }
    Ok(MetricReport::from_records(&records)?)
}

/// Trains with Adam on mini-batches of `batch_size` step-instances, reshuffling
/// samples every epoch, and keeps the parameters of the best evaluation epoch
/// (highest R@1, then MRR; later epochs win ties).
///
/// Without an `eval` set the training samples are evaluated.
pub fn train(
    samples: &[PreparedSample],
    eval: Option<&[PreparedSample]>,
    config: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    train_cfg.validate()?;
    if samples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let eval = eval.unwrap_or(samples);
    if eval.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let feed = if train_cfg.teacher_forcing { AnswerFeed::TeacherForced } else { AnswerFeed::Predicted };

    let mut params = ModelParams::init(config, &mut stream_rng(config.seed, INIT_STREAM))?;
    let mut shuffle_rng = stream_rng(config.seed, SHUFFLE_STREAM);
    let mut opt = OptState::new(&params);
    let mut order: Vec<usize> = (0..samples.len()).collect();

    let mut log = Vec::with_capacity(train_cfg.epochs);
    let mut best: Option<(usize, ModelParams)> = None;
    for epoch in 0..train_cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let instances: Vec<(usize, usize)> =
            order.iter().flat_map(|&s| (0..samples[s].steps.len()).map(move |i| (s, i))).collect();

        let mut loss_sum = 0.0;
        for batch in instances.chunks(train_cfg.batch_size) {
            let (loss, grads) = batch_gradients(&params, config, samples, batch, feed)?;
            loss_sum += loss * batch.len() as f64;
            adam_update(&mut params, &grads, &mut opt, train_cfg);
        }
        let report = evaluate_prepared(&params, config, eval)?;
        let improved = match &best {
            None => true,
            Some((b, _)) => {
                let prev: &EpochLog = &log[*b];
                (report.r_at_1, report.mrr) >= (prev.eval.r_at_1, prev.eval.mrr)
            }
        };
        log.push(EpochLog { epoch, loss: loss_sum / instances.len() as f64, eval: report });
        if improved {
            best = Some((epoch, params.clone()));
        }
    }

    let (best_epoch, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome { params: best_params, final_params: params, log, best_epoch })
}
