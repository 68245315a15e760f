//! Distantly supervised training data.
//!
//! For every source question the index is searched with the question text,
//! and each of the top `n` paragraphs is checked for an answer string. A hit
//! becomes a positive example; misses become negatives, either all of them
//! or `d` per positive. Questions with no hit in the top `n` emit nothing.

mod matching;
mod stages;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::index::{Index, Paragraph, RetrievedPassage};
use crate::text::{AnalyzerKind, Lang};

pub use matching::{find_answer_span, AnswerSpan};
pub use stages::{build_stage_plan, Stage, StageManifest, Strategy};

#[derive(Debug, thiserror::Error)]
pub enum DsError {
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
    #[error("index analyzer {index:?} cannot serve `{lang}` questions")]
    LangMismatch { index: AnalyzerKind, lang: Lang },
    #[error("duplicate question id `{0}`")]
    DuplicateQuestion(String),
    #[error("question `{id}`: {reason}")]
    InvalidExample { id: String, reason: String },
    #[error("strategy {strategy} needs at least one {dataset} file")]
    MissingFiles {
        strategy: Strategy,
        dataset: &'static str,
    },
}

/// A source question with its acceptable answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub question_id: String,
    pub question: String,
    pub answers: Vec<String>,
    pub lang: Lang,
}

impl QaExample {
    pub fn validate(&self) -> Result<(), DsError> {
        let invalid = |reason: &str| DsError::InvalidExample {
            id: self.question_id.clone(),
            reason: reason.to_string(),
        };
        if self.question.trim().is_empty() {
            return Err(invalid("empty question"));
        }
        if self.answers.is_empty() {
            return Err(invalid("no answers"));
        }
        Ok(())
    }
}

/// Serialized as `"all"` or `"ratio:<d>"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum NegativePolicy {
    /// `d` negatives per positive.
    Ratio(u32),
    /// Every non-matching candidate.
    All,
}

impl fmt::Display for NegativePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NegativePolicy::All => f.write_str("all"),
            NegativePolicy::Ratio(d) => write!(f, "ratio:{d}"),
        }
    }
}

impl From<NegativePolicy> for String {
    fn from(p: NegativePolicy) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for NegativePolicy {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl FromStr for NegativePolicy {
    type Err = String;

    /// `all` or `ratio:<d>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(NegativePolicy::All);
        }
        s.strip_prefix("ratio:")
            .and_then(|d| d.parse().ok())
            .filter(|&d| d >= 1)
            .map(NegativePolicy::Ratio)
            .ok_or_else(|| format!("bad negative policy `{s}` (expected `all` or `ratio:<d>` with d >= 1)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Retrieval candidates examined per question.
    pub n: usize,
    pub negative_policy: NegativePolicy,
    pub lang: Lang,
}

impl AugmentationConfig {
    pub fn new(lang: Lang) -> Self {
        AugmentationConfig {
            n: 10,
            negative_policy: NegativePolicy::All,
            lang,
        }
    }

    pub fn validate(&self) -> Result<(), DsError> {
        if self.n == 0 {
            return Err(DsError::InvalidConfig("n must be >= 1".into()));
        }
        if self.negative_policy == NegativePolicy::Ratio(0) {
            return Err(DsError::InvalidConfig("ratio d must be >= 1".into()));
        }
        Ok(())
    }
}

/// One (question, paragraph) row of a training file.
///
/// Rows mined from retrieval carry the retriever rank and score; rows
/// converted from a source dataset leave both `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub question_id: String,
    pub question: String,
    pub paragraph: Arc<Paragraph>,
    pub answer_text: Option<String>,
    pub answer_start_char: Option<usize>,
    pub is_negative: bool,
    pub retriever_rank: Option<u32>,
    pub retriever_score: Option<f64>,
}

impl TrainingExample {
    fn positive(q: &QaExample, hit: &RetrievedPassage, span: AnswerSpan) -> Self {
        TrainingExample {
            question_id: q.question_id.clone(),
            question: q.question.clone(),
            paragraph: Arc::clone(&hit.paragraph),
            answer_text: Some(span.text),
            answer_start_char: Some(span.start_char),
            is_negative: false,
            retriever_rank: Some(hit.rank),
            retriever_score: Some(hit.retriever_score),
        }
    }

    fn negative(q: &QaExample, hit: &RetrievedPassage) -> Self {
        TrainingExample {
            question_id: q.question_id.clone(),
            question: q.question.clone(),
            paragraph: Arc::clone(&hit.paragraph),
            answer_text: None,
            answer_start_char: None,
            is_negative: true,
            retriever_rank: Some(hit.rank),
            retriever_score: Some(hit.retriever_score),
        }
    }
}

/// Positives and negatives for one question from its ranked candidates.
pub fn label_candidates(
    question: &QaExample,
    candidates: &[RetrievedPassage],
    policy: NegativePolicy,
    lang: Lang,
) -> Vec<TrainingExample> {
    let mut positives = Vec::new();
    let mut misses = Vec::new();
    for hit in candidates {
        match find_answer_span(&hit.paragraph.text, &question.answers, lang) {
            Some(span) => positives.push(TrainingExample::positive(question, hit, span)),
            None => misses.push(hit),
        }
    }
    if positives.is_empty() {
        return Vec::new();
    }
    let keep = match policy {
        NegativePolicy::All => misses.len(),
        NegativePolicy::Ratio(d) => (positives.len() * d as usize).min(misses.len()),
    };
    let mut out = positives;
    out.extend(misses[..keep].iter().map(|hit| TrainingExample::negative(question, hit)));
    out.sort_by_key(|e| e.retriever_rank);
    out
}

/// Mines DS(±) examples for `source` against `index`.
///
/// Output is ordered by `(question_id, retriever_rank)` whatever the thread
/// count.
pub fn generate_dataset(
    source: &[QaExample],
    index: &Index,
    config: &AugmentationConfig,
) -> Result<Vec<TrainingExample>, DsError> {
    config.validate()?;
    if index.analyzer().lang() != config.lang {
        return Err(DsError::LangMismatch {
            index: index.analyzer(),
            lang: config.lang,
        });
    }
    let mut ids = HashSet::with_capacity(source.len());
    for q in source {
        q.validate()?;
        if !ids.insert(q.question_id.as_str()) {
            return Err(DsError::DuplicateQuestion(q.question_id.clone()));
        }
    }

    let mut per_question: Vec<(&str, Vec<TrainingExample>)> = source
        .par_iter()
        .map(|q| {
            let candidates = index.search(&q.question, config.n);
            let rows = label_candidates(q, &candidates, config.negative_policy, config.lang);
            (q.question_id.as_str(), rows)
        })
        .collect();
    per_question.sort_by(|a, b| a.0.cmp(b.0));
    Ok(per_question.into_iter().flat_map(|(_, rows)| rows).collect())
}

/// DS(+): the positive rows of a DS(±) set.
pub fn positives_only(examples: &[TrainingExample]) -> Vec<TrainingExample> {
    examples.iter().filter(|e| !e.is_negative).cloned().collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub positives: usize,
    pub negatives: usize,
    pub total: usize,
    pub questions_with_positive: usize,
}

pub fn dataset_stats(examples: &[TrainingExample]) -> DatasetStats {
    let mut answered = HashSet::new();
    let mut stats = DatasetStats::default();
    for e in examples {
        if e.is_negative {
            stats.negatives += 1;
        } else {
            stats.positives += 1;
            answered.insert(e.question_id.as_str());
        }
    }
    stats.total = stats.positives + stats.negatives;
    stats.questions_with_positive = answered.len();
    stats
}
