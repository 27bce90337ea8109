//! TF-IDF grounding of a question onto a video's function set.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GroundingError {
    #[error("cannot build a TF-IDF model from an empty corpus")]
    EmptyCorpus,
    #[error("vector dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("function set is empty")]
    EmptyFunctionSet,
}

/// Lowercase terms of a text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenList(pub Vec<String>);

impl TokenList {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

/// Lowercases and splits on every non-alphanumeric character. No stopwords are removed.
pub fn tokenize(text: &str) -> TokenList {
    TokenList(
        text.split(|c: char| !c.is_alphanumeric()).filter(|piece| !piece.is_empty()).map(str::to_lowercase).collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    vocab: HashMap<String, usize>,
    idf: Vec<f64>,
    doc_count: usize,
}

impl TfidfModel {
    pub fn vocab_size(&self) -> usize {
        self.idf.len()
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.vocab.get(term).copied()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.index_of(term).map(|i| self.idf[i])
    }
}

/// Builds vocabulary and smoothed IDF `ln((1 + N) / (1 + df)) + 1`.
///
/// Column indices follow the lexicographic order of terms, so the model does
/// not depend on hash iteration order.
pub fn build_tfidf(corpus: &[TokenList]) -> Result<TfidfModel, GroundingError> {
    if corpus.is_empty() {
        return Err(GroundingError::EmptyCorpus);
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in corpus {
        let mut seen: Vec<&str> = doc.iter().collect();
        seen.sort_unstable();
        seen.dedup();
        for term in seen {
            *df.entry(term).or_default() += 1;
        }
    }
    let n = corpus.len() as f64;
    let mut vocab = HashMap::with_capacity(df.len());
    let mut idf = Vec::with_capacity(df.len());
    for (i, (term, count)) in df.into_iter().enumerate() {
        vocab.insert(term.to_string(), i);
        idf.push(((1.0 + n) / (1.0 + count as f64)).ln() + 1.0);
    }
    Ok(TfidfModel { vocab, idf, doc_count: corpus.len() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    entries: Vec<(usize, f64)>,
    dim: usize,
}

impl SparseVector {
    /// Builds a vector from unordered entries; duplicate indices are summed.
    pub fn from_entries(dim: usize, mut entries: Vec<(usize, f64)>) -> Self {
        entries.sort_by_key(|&(i, _)| i);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
        for (i, v) in entries {
            assert!(i < dim, "index {i} out of range for dimension {dim}");
            match merged.last_mut() {
                Some((last, acc)) if *last == i => *acc += v,
                _ => merged.push((i, v)),
            }
        }
        SparseVector { entries: merged, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        SparseVector { entries: self.entries.iter().map(|&(i, v)| (i, v * c)).collect(), dim: self.dim }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }
}

/// Raw term count times IDF; out-of-vocabulary terms are dropped.
pub fn vectorize(model: &TfidfModel, tokens: &TokenList) -> SparseVector {
    let entries = tokens.iter().filter_map(|t| model.index_of(t)).map(|i| (i, model.idf[i])).collect();
    SparseVector::from_entries(model.vocab_size(), entries)
}

/// Cosine similarity, 0 when either vector has zero norm.
pub fn cosine_sim(a: &SparseVector, b: &SparseVector) -> Result<f64, GroundingError> {
    if a.dim != b.dim {
        return Err(GroundingError::DimensionMismatch(a.dim, b.dim));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let mut dot = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < a.entries.len() && j < b.entries.len() {
        let (ia, va) = a.entries[i];
        let (ib, vb) = b.entries[j];
        match ia.cmp(&ib) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += va * vb;
                i += 1;
                j += 1;
            }
        }
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Normalized relevance of each function to a question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionWeights {
    pub weights: Vec<f64>,
}

impl FunctionWeights {
    pub fn uniform(n: usize) -> Self {
        FunctionWeights { weights: vec![1.0 / n as f64; n] }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn argmax(&self) -> Option<usize> {
        self.weights
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, &w)| match best {
                Some((_, bw)) if bw >= w => best,
                _ => Some((i, w)),
            })
            .map(|(i, _)| i)
    }
}

/// Raw cosine score of the question against each function.
pub fn score_functions(
    model: &TfidfModel,
    question: &TokenList,
    functions: &[TokenList],
) -> Result<Vec<f64>, GroundingError> {
    if functions.is_empty() {
        return Err(GroundingError::EmptyFunctionSet);
    }
    let q = vectorize(model, question);
    functions.iter().map(|f| cosine_sim(&q, &vectorize(model, f))).collect()
}

/// Turns raw scores into weights.
///
/// With `top_k`, only the `k` highest scores survive (ties go to the lower
/// index). If every surviving score is zero the surviving set gets uniform
/// weight.
pub fn normalize_scores(scores: &[f64], top_k: Option<usize>) -> Result<FunctionWeights, GroundingError> {
    if scores.is_empty() {
        return Err(GroundingError::EmptyFunctionSet);
    }
    let n = scores.len();
    let keep = top_k.map_or(n, |k| k.clamp(1, n));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let kept = &order[..keep];

    let total: f64 = kept.iter().map(|&i| scores[i].max(0.0)).sum();
    let mut weights = vec![0.0; n];
    for &i in kept {
        weights[i] = if total > 0.0 { scores[i].max(0.0) / total } else { 1.0 / keep as f64 };
    }
    Ok(FunctionWeights { weights })
}

pub fn ground_question(
    model: &TfidfModel,
    question: &TokenList,
    functions: &[TokenList],
    top_k: Option<usize>,
) -> Result<FunctionWeights, GroundingError> {
    normalize_scores(&score_functions(model, question, functions)?, top_k)
}

/// Builds the model over the function texts and grounds `question` on them.
///
/// Returns raw scores alongside the weights.
pub fn ground_text(
    question: &str,
    function_texts: &[&str],
    top_k: Option<usize>,
) -> Result<(FunctionWeights, Vec<f64>), GroundingError> {
    let docs: Vec<TokenList> = function_texts.iter().map(|t| tokenize(t)).collect();
    let model = build_tfidf(&docs)?;
    let scores = score_functions(&model, &tokenize(question), &docs)?;
    Ok((normalize_scores(&scores, top_k)?, scores))
}
