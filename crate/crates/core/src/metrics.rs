//! Ranking metrics over step-instances: Recall@k, mean rank and mean reciprocal rank.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::QaDataset;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no rank records")]
    EmptyRecords,
    #[error("no prediction for sample {sample} step {step}")]
    CoverageGap { sample: usize, step: usize },
    #[error("invalid rank record: rank {rank} of {num_candidates}")]
    InvalidRecord { rank: usize, num_candidates: usize },
}

/// 1-based position of the ground truth within one step's ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankRecord {
    pub rank: usize,
    pub num_candidates: usize,
}

impl RankRecord {
    pub fn new(rank: usize, num_candidates: usize) -> Result<Self, MetricsError> {
        if rank == 0 || rank > num_candidates {
            return Err(MetricsError::InvalidRecord { rank, num_candidates });
        }
        Ok(RankRecord { rank, num_candidates })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub r_at_1: f64,
    pub r_at_3: f64,
    pub mr: f64,
    pub mrr: f64,
    pub count: usize,
    /// Raw per-instance ranks, kept for auditing.
    #[serde(default)]
    pub ranks: Vec<usize>,
}

impl MetricReport {
    pub fn from_records(records: &[RankRecord]) -> Result<Self, MetricsError> {
        Ok(MetricReport {
            r_at_1: recall_at_k(records, 1)?,
            r_at_3: recall_at_k(records, 3)?,
            mr: mean_rank(records)?,
            mrr: mrr(records)?,
            count: records.len(),
            ranks: records.iter().map(|r| r.rank).collect(),
        })
    }
}

pub fn recall_at_k(records: &[RankRecord], k: usize) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    let hits = records.iter().filter(|r| r.rank <= k).count();
    Ok(100.0 * hits as f64 / records.len() as f64)
}

pub fn mean_rank(records: &[RankRecord]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    Ok(records.iter().map(|r| r.rank as f64).sum::<f64>() / records.len() as f64)
}

pub fn mrr(records: &[RankRecord]) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyRecords);
    }
    Ok(records.iter().map(|r| 1.0 / r.rank as f64).sum::<f64>() / records.len() as f64)
}

/// Rank records from predicted rankings: `predictions[sample][step]` lists
/// candidate indices best-first.
pub fn rank_records(predictions: &[Vec<Vec<usize>>], dataset: &QaDataset) -> Result<Vec<RankRecord>, MetricsError> {
    let mut records = Vec::new();
    for (s, sample) in dataset.samples.iter().enumerate() {
        for (i, step) in sample.steps.iter().enumerate() {
            let ranking =
                predictions.get(s).and_then(|p| p.get(i)).ok_or(MetricsError::CoverageGap { sample: s, step: i })?;
            let pos = ranking
                .iter()
                .position(|&c| c == step.gt_index)
                .ok_or(MetricsError::CoverageGap { sample: s, step: i })?;
            records.push(RankRecord::new(pos + 1, ranking.len())?);
        }
    }
    Ok(records)
}

pub fn evaluate(predictions: &[Vec<Vec<usize>>], dataset: &QaDataset) -> Result<MetricReport, MetricsError> {
    MetricReport::from_records(&rank_records(predictions, dataset)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CandidateAnswer, QaSample, Step};
    use proptest::prelude::*;

    fn recs(ranks: &[usize]) -> Vec<RankRecord> {
        ranks.iter().map(|&r| RankRecord::new(r, 4.max(r)).unwrap()).collect()
    }

    fn dataset(steps: &[(usize, usize)]) -> QaDataset {
        let steps = steps
            .iter()
            .map(|&(m, gt)| Step {
                candidates: (0..m)
                    .map(|j| CandidateAnswer { text_emb_id: format!("at:v:{j}"), button_emb_id: None })
                    .collect(),
                gt_index: gt,
            })
            .collect();
        QaDataset {
            samples: vec![QaSample {
                video_id: "v".into(),
                question_text: "q".into(),
                question_emb_id: "q:v:0".into(),
                steps,
            }],
        }
    }

    #[test]
    fn recall_examples() {
        let r = recs(&[1, 1, 2]);
        assert!((recall_at_k(&r, 1).unwrap() - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(recall_at_k(&r, 3).unwrap(), 100.0);
        assert_eq!(recall_at_k(&recs(&[1, 1]), 7).unwrap(), 100.0);
        assert_eq!(recall_at_k(&[], 1), Err(MetricsError::EmptyRecords));
    }

    #[test]
    fn mean_rank_examples() {
        assert!((mean_rank(&recs(&[1, 1, 2])).unwrap() - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(mean_rank(&recs(&[5])).unwrap(), 5.0);
        assert_eq!(mean_rank(&recs(&[2, 2])).unwrap(), 2.0);
    }

    #[test]
    fn mrr_examples() {
        assert!((mrr(&recs(&[1, 1, 2])).unwrap() - 2.5 / 3.0).abs() < 1e-12);
        assert_eq!(mrr(&recs(&[1, 1, 1])).unwrap(), 1.0);
        assert_eq!(mrr(&recs(&[4])).unwrap(), 0.25);
        assert_eq!(mrr(&[]), Err(MetricsError::EmptyRecords));
    }

    #[test]
    fn evaluate_examples() {
        let ds = dataset(&[(4, 0), (4, 1), (4, 2)]);
        let perfect = vec![vec![vec![0, 1, 2, 3], vec![1, 0, 2, 3], vec![2, 0, 1, 3]]];
        let rep = evaluate(&perfect, &ds).unwrap();
        assert_eq!((rep.r_at_1, rep.r_at_3, rep.mr, rep.mrr, rep.count), (100.0, 100.0, 1.0, 1.0, 3));

        let worst = vec![vec![vec![1, 2, 3, 0], vec![0, 2, 3, 1], vec![0, 1, 3, 2]]];
        let rep = evaluate(&worst, &ds).unwrap();
        assert_eq!((rep.r_at_1, rep.mr, rep.mrr), (0.0, 4.0, 0.25));

        let mixed = vec![vec![vec![0, 1, 2, 3], vec![0, 1, 2, 3], vec![0, 1, 2, 3]]];
        let rep = evaluate(&mixed, &ds).unwrap();
        assert!((rep.r_at_1 - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(rep.r_at_3, 100.0);
        assert_eq!(rep.mr, 2.0);
        assert!((rep.mrr - (1.0 + 0.5 + 1.0 / 3.0) / 3.0).abs() < 1e-12);
        assert_eq!(rep.ranks, [1, 2, 3]);

        let gap = vec![vec![vec![0, 1, 2, 3]]];
        assert_eq!(evaluate(&gap, &ds), Err(MetricsError::CoverageGap { sample: 0, step: 1 }));
    }

    proptest! {
        #[test]
        fn metric_invariants(ranks in prop::collection::vec(1usize..=6, 1..30), k in 1usize..6) {
            let r: Vec<RankRecord> = ranks.iter().map(|&x| RankRecord::new(x, 6).unwrap()).collect();
            prop_assert!(recall_at_k(&r, k).unwrap() <= recall_at_k(&r, k + 1).unwrap());
            prop_assert_eq!(recall_at_k(&r, 6).unwrap(), 100.0);
            let (mr, m) = (mean_rank(&r).unwrap(), mrr(&r).unwrap());
            prop_assert!(1.0 / mr <= m + 1e-12 && m <= 1.0);

            let mut rev = r.clone();
            rev.reverse();
            let a = MetricReport::from_records(&r).unwrap();
            let b = MetricReport::from_records(&rev).unwrap();
            prop_assert!((a.mr - b.mr).abs() < 1e-12 && (a.mrr - b.mrr).abs() < 1e-12);
            prop_assert_eq!(a.r_at_1, b.r_at_1);
        }
    }
}
