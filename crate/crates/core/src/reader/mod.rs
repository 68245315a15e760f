//! Reader integration: scoring paragraphs with a span-extracting reader,
//! fusing reader and retriever scores, and picking final answers.
//!
//! Reader scores are unnormalized (no softmax across spans), so they are
//! comparable across paragraphs of the same question. The final score of a
//! candidate is the linear interpolation
//!
//! ```text
//! fused = (1 - mu) * retriever_score + mu * reader_score
//! ```
//!
//! applied to the raw scores; `mu` absorbs any scale mismatch and is tuned on
//! held-out questions with [`tune_mu`].

mod mock;
mod oracle;
pub mod wire;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distant_supervision::QaExample;
use crate::evaluation::{exact_match, GoldAnswerSet};
use crate::index::{Index, Paragraph, RetrievedPassage};
use crate::text::Lang;

pub use mock::{MockEntry, MockReader, MockTable};
pub use oracle::{AnswerOracle, ORACLE_SCORE};
pub use wire::WireReader;

#[derive(Debug, Clone, thiserror::Error)]
pub enum ReaderError {
    #[error("request {id}: no response within {timeout_ms} ms")]
    Timeout { id: String, timeout_ms: u64 },
    #[error("request {id}: malformed response: {reason}")]
    Malformed { id: String, reason: String },
    #[error("request {id}: span [{start}, {end}) is not inside a paragraph of {len} characters")]
    OutOfBounds {
        id: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("reader transport: {0}")]
    Transport(String),
    #[error("invalid reader input: {0}")]
    InvalidInput(String),
    #[error("question `{question_id}`, paragraph {paragraph}: {source}")]
    Passage {
        question_id: String,
        paragraph: String,
        #[source]
        source: Box<ReaderError>,
    },
}

/// One paragraph to read for one question.
#[derive(Debug, Clone, Copy)]
pub struct ReaderRequest<'a> {
    pub question_id: &'a str,
    pub question: &'a str,
    pub paragraph: &'a Paragraph,
    pub lang: Lang,
}

/// The reader's best span in a paragraph, in character offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub start_char: usize,
    pub end_char: usize,
    pub reader_score: f64,
}

/// A span-extracting reader.
///
/// `read_batch` answers requests positionally; `None` means the reader
/// produced no span for that paragraph. Implementations may pipeline the
/// batch but must not reorder results.
pub trait Reader: Send + Sync {
    fn read_batch(&self, requests: &[ReaderRequest<'_>]) -> Vec<Result<Option<SpanPrediction>, ReaderError>>;

    fn read(&self, request: &ReaderRequest<'_>) -> Result<Option<SpanPrediction>, ReaderError> {
        self.read_batch(std::slice::from_ref(request))
            .pop()
            .unwrap_or_else(|| Err(ReaderError::Transport("reader returned no result".into())))
    }
}

impl<R: Reader + ?Sized> Reader for Box<R> {
    fn read_batch(&self, requests: &[ReaderRequest<'_>]) -> Vec<Result<Option<SpanPrediction>, ReaderError>> {
        (**self).read_batch(requests)
    }
}

fn check_bounds(
    prediction: Option<SpanPrediction>,
    paragraph: &Paragraph,
) -> Result<Option<SpanPrediction>, ReaderError> {
    match prediction {
        Some(p) => {
            let len = paragraph.char_len();
            if p.start_char < p.end_char && p.end_char <= len && p.reader_score.is_finite() {
                Ok(Some(p))
            } else {
                Err(ReaderError::OutOfBounds {
                    id: paragraph.key(),
                    start: p.start_char,
                    end: p.end_char,
                    len,
                })
            }
        }
        None => Ok(None),
    }
}

/// Best span of one paragraph, bounds-checked.
pub fn score_paragraph(
    reader: &dyn Reader,
    question_id: &str,
    question: &str,
    paragraph: &Paragraph,
    lang: Lang,
) -> Result<Option<SpanPrediction>, ReaderError> {
    let request = ReaderRequest {
        question_id,
        question,
        paragraph,
        lang,
    };
    reader.read(&request).and_then(|p| check_bounds(p, paragraph))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub mu: f64,
}

impl FusionConfig {
    pub fn new(mu: f64) -> Result<Self, ReaderError> {
        if (0.0..=1.0).contains(&mu) {
            Ok(FusionConfig { mu })
        } else {
            Err(ReaderError::InvalidInput(format!("mu must be in [0, 1], got {mu}")))
        }
    }
}

/// `(1 - mu) * retriever_score + mu * reader_score`.
#[inline]
pub fn fuse(retriever_score: f64, reader_score: f64, config: FusionConfig) -> f64 {
    (1.0 - config.mu) * retriever_score + config.mu * reader_score
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerCandidate {
    pub question_id: String,
    pub paragraph: Arc<Paragraph>,
    pub retriever_rank: u32,
    pub start_char: usize,
    pub end_char: usize,
    pub span_text: String,
    pub retriever_score: f64,
    pub reader_score: f64,
    pub fused_score: f64,
}

/// Candidates of one question whose reader output does not depend on `mu`.
#[derive(Debug, Clone)]
pub struct ReadPassages {
    pub question_id: String,
    passages: Vec<(RetrievedPassage, SpanPrediction)>,
}

impl ReadPassages {
    /// Reads every passage; the first failing passage fails the question.
    pub fn read(
        reader: &dyn Reader,
        question: &QaExample,
        passages: &[RetrievedPassage],
    ) -> Result<ReadPassages, ReaderError> {
        let requests: Vec<ReaderRequest<'_>> = passages
            .iter()
            .map(|p| ReaderRequest {
                question_id: &question.question_id,
                question: &question.question,
                paragraph: &p.paragraph,
                lang: question.lang,
            })
            .collect();
        let results = reader.read_batch(&requests);
        if results.len() != passages.len() {
            return Err(ReaderError::Transport(format!(
                "reader answered {} of {} requests",
                results.len(),
                passages.len()
            )));
        }
        let mut read = Vec::new();
        for (passage, result) in passages.iter().zip(results) {
            let wrap = |source| ReaderError::Passage {
                question_id: question.question_id.clone(),
                paragraph: passage.paragraph.key(),
                source: Box::new(source),
            };
            let checked = result.and_then(|p| check_bounds(p, &passage.paragraph)).map_err(wrap)?;
            if let Some(span) = checked {
                read.push((passage.clone(), span));
            }
        }
        Ok(ReadPassages {
            question_id: question.question_id.clone(),
            passages: read,
        })
    }

    /// Span-yielding passages ranked by fused score, best first; ties go to
    /// the better retriever rank.
    pub fn rank(&self, config: FusionConfig, top_m: usize) -> Vec<AnswerCandidate> {
        let mut scored: Vec<(f64, &RetrievedPassage, &SpanPrediction)> = self
            .passages
            .iter()
            .map(|(p, s)| (fuse(p.retriever_score, s.reader_score, config), p, s))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.rank.cmp(&b.1.rank)));
        scored
            .into_iter()
            .take(top_m)
            .map(|(fused, p, s)| AnswerCandidate {
                question_id: self.question_id.clone(),
                paragraph: Arc::clone(&p.paragraph),
                retriever_rank: p.rank,
                start_char: s.start_char,
                end_char: s.end_char,
                span_text: p
                    .paragraph
                    .text
                    .chars()
                    .skip(s.start_char)
                    .take(s.end_char - s.start_char)
                    .collect(),
                retriever_score: p.retriever_score,
                reader_score: s.reader_score,
                fused_score: fused,
            })
            .collect()
    }

    /// Text of the best candidate, or `""` when no passage yielded a span.
    pub fn best_answer(&self, config: FusionConfig) -> String {
        self.rank(config, 1)
            .pop()
            .map(|c| c.span_text)
            .unwrap_or_default()
    }
}

/// Reads `passages` for `question` and returns the `top_m` best candidates.
pub fn answer_question(
    question: &QaExample,
    passages: &[RetrievedPassage],
    reader: &dyn Reader,
    config: FusionConfig,
    top_m: usize,
) -> Result<Vec<AnswerCandidate>, ReaderError> {
    if top_m == 0 {
        return Err(ReaderError::InvalidInput("top_m must be >= 1".into()));
    }
    Ok(ReadPassages::read(reader, question, passages)?.rank(config, top_m))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuPoint {
    pub mu: f64,
    pub em: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuTuning {
    pub mu_star: f64,
    pub table: Vec<MuPoint>,
}

/// `{0, step, 2 step, ...}` capped by and always including 1.
pub fn mu_grid(grid_step: f64) -> Result<Vec<f64>, ReaderError> {
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(ReaderError::InvalidInput(format!(
            "grid step must be in (0, 0.5], got {grid_step}"
        )));
    }
    let mut grid = Vec::new();
    let mut i = 0u32;
    loop {
        let mu = ((i as f64 * grid_step) * 1e12).round() / 1e12;
        if mu >= 1.0 {
            break;
        }
        grid.push(mu);
        i += 1;
    }
    grid.push(1.0);
    Ok(grid)
}

/// Grid search for the interpolation weight maximizing end-to-end EM on
/// `dev`; the smallest maximizing `mu` wins.
pub fn tune_mu(
    dev: &[QaExample],
    index: &Index,
    reader: &dyn Reader,
    k: usize,
    grid_step: f64,
) -> Result<MuTuning, ReaderError> {
    let grid = mu_grid(grid_step)?;
    if dev.is_empty() {
        return Err(ReaderError::InvalidInput("empty tuning set".into()));
    }
    let read: Vec<ReadPassages> = dev
        .par_iter()
        .map(|q| ReadPassages::read(reader, q, &index.search(&q.question, k)))
        .collect::<Result<_, _>>()?;

    let mut best: Option<(usize, f64)> = None;
    let mut table = Vec::with_capacity(grid.len());
    for &mu in &grid {
        let config = FusionConfig { mu };
        let hits = dev
            .iter()
            .zip(&read)
            .filter(|(q, r)| {
                let gold = GoldAnswerSet::from(*q);
                exact_match(&r.best_answer(config), &gold) == 1.0
            })
            .count();
        if best.is_none_or(|(h, _)| hits > h) {
            best = Some((hits, mu));
        }
        table.push(MuPoint {
            mu,
            em: hits as f64 / dev.len() as f64,
        });
    }
    Ok(MuTuning {
        mu_star: best.map(|(_, mu)| mu).unwrap_or(0.0),
        table,
    })
}
