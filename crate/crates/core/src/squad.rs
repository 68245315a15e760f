//! SQuAD v1.1 ingestion.
//!
//! Each question becomes a [`QaExample`] and a [`GoldAnswerSet`] holding all
//! listed answer texts, and one SRC training row pairing the question with its
//! original paragraph. SRC rows use the article title as `doc_id` and the
//! paragraph's position in the article as `para_id`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::distant_supervision::{find_answer_span, QaExample, TrainingExample};
use crate::evaluation::GoldAnswerSet;
use crate::index::Paragraph;
use crate::text::Lang;

#[derive(Debug, thiserror::Error)]
pub enum SquadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: at `{location}`: {message}")]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },
    #[error("{path}: question `{id}`: {reason}")]
    InvalidQuestion {
        path: PathBuf,
        id: String,
        reason: String,
    },
}

#[derive(Deserialize)]
struct SquadFile {
    data: Vec<Article>,
}

#[derive(Deserialize)]
struct Article {
    title: String,
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<Qa>,
}

#[derive(Deserialize)]
struct Qa {
    id: String,
    question: String,
    answers: Vec<SquadAnswer>,
}

#[derive(Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SquadDataset {
    pub questions: Vec<QaExample>,
    pub golds: Vec<GoldAnswerSet>,
    pub src_rows: Vec<TrainingExample>,
    /// Questions whose recorded span could not be located in the context;
    /// they have no SRC row.
    pub unaligned: Vec<String>,
}

pub fn ingest_squad_v11(path: impl AsRef<Path>, lang: Lang) -> Result<SquadDataset, SquadError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| SquadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_squad_v11(&bytes, lang, path)
}

/// Parses an in-memory SQuAD v1.1 document; `path` only labels errors.
pub fn parse_squad_v11(bytes: &[u8], lang: Lang, path: &Path) -> Result<SquadDataset, SquadError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let file: SquadFile = serde_path_to_error::deserialize(de).map_err(|e| SquadError::Parse {
        path: path.to_path_buf(),
        location: e.path().to_string(),
        message: e.inner().to_string(),
    })?;

    let mut out = SquadDataset::default();
    let mut seen = HashSet::new();
    for article in file.data {
        for (pi, para) in article.paragraphs.into_iter().enumerate() {
            let paragraph = Arc::new(Paragraph::new(article.title.clone(), pi as u32, para.context));
            for qa in para.qas {
                let invalid = |reason: &str| SquadError::InvalidQuestion {
                    path: path.to_path_buf(),
                    id: qa.id.clone(),
                    reason: reason.to_string(),
                };
                if !seen.insert(qa.id.clone()) {
                    return Err(invalid("duplicate question id"));
                }
                if qa.answers.is_empty() {
                    return Err(invalid("no answers"));
                }
                let example = QaExample {
                    question_id: qa.id.clone(),
                    question: qa.question.clone(),
                    answers: qa.answers.iter().map(|a| a.text.clone()).collect(),
                    lang,
                };
                example.validate().map_err(|e| invalid(&e.to_string()))?;

                match locate(&paragraph.text, &qa.answers[0], &example.answers, lang) {
                    Some((start, text)) => out.src_rows.push(TrainingExample {
                        question_id: qa.id.clone(),
                        question: qa.question.clone(),
                        paragraph: Arc::clone(&paragraph),
                        answer_text: Some(text),
                        answer_start_char: Some(start),
                        is_negative: false,
                        retriever_rank: None,
                        retriever_score: None,
                    }),
                    None => out.unaligned.push(qa.id.clone()),
                }
                out.golds.push(GoldAnswerSet::from(&example));
                out.questions.push(example);
            }
        }
    }
    Ok(out)
}

/// The recorded span if it matches the context, otherwise the first match of
/// any answer.
fn locate(context: &str, first: &SquadAnswer, answers: &[String], lang: Lang) -> Option<(usize, String)> {
    let len = first.text.chars().count();
    let recorded: String = context.chars().skip(first.answer_start).take(len).collect();
    if len > 0 && recorded == first.text {
        return Some((first.answer_start, recorded));
    }
    find_answer_span(context, answers, lang).map(|s| (s.start_char, s.text))
}
