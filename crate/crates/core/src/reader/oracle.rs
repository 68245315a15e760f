//! A reader that already knows the answers: for a known question it returns
//! the first gold answer occurrence in the paragraph. Useful to exercise the
//! wire protocol and a full pipeline without a model.

use std::collections::HashMap;

use super::wire::{WireRequest, WireResponse};
use crate::distant_supervision::{find_answer_span, QaExample};

/// Score attached to every span the oracle returns.
pub const ORACLE_SCORE: f64 = 1.0;

#[derive(Debug, Clone, Default)]
pub struct AnswerOracle {
    by_question: HashMap<String, Vec<String>>,
}

impl AnswerOracle {
    /// Keys answers by question text; repeated texts pool their answers.
    pub fn new<'a>(questions: impl IntoIterator<Item = &'a QaExample>) -> Self {
        let mut by_question: HashMap<String, Vec<String>> = HashMap::new();
        for q in questions {
            by_question
                .entry(q.question.clone())
                .or_default()
                .extend(q.answers.iter().cloned());
        }
        AnswerOracle { by_question }
    }

    pub fn respond(&self, request: &WireRequest) -> WireResponse {
        let span = self
            .by_question
            .get(&request.question)
            .and_then(|answers| find_answer_span(&request.paragraph, answers, request.lang));
        match span {
            Some(s) => WireResponse::Span {
                id: request.id.clone(),
                start_char: s.start_char,
                end_char: s.end_char(),
                score: ORACLE_SCORE,
            },
            None => WireResponse::NoAnswer {
                id: request.id.clone(),
                score: 0.0,
            },
        }
    }
}
