use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Reader, ReaderError, ReaderRequest, SpanPrediction};

/// A canned reader output for one (question, paragraph) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockEntry {
    pub question_id: String,
    pub doc_id: String,
    pub para_id: u32,
    pub start_char: usize,
    pub end_char: usize,
    pub score: f64,
}

/// On-disk form of a mock reader:
/// `{"default_score": f, "entries": [MockEntry, ...]}`.
///
/// Pairs missing from `entries` yield no span; `default_score` is carried
/// for completeness and never attached to a span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockTable {
    #[serde(default)]
    pub default_score: f64,
    pub entries: Vec<MockEntry>,
}

impl MockTable {
    pub fn load(path: impl AsRef<Path>) -> Result<MockTable, ReaderError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| ReaderError::InvalidInput(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| ReaderError::InvalidInput(format!("{}: {e}", path.display())))
    }
}

/// Deterministic table-driven reader.
#[derive(Debug, Clone)]
pub struct MockReader {
    table: HashMap<(String, String, u32), SpanPrediction>,
    default_score: f64,
}

impl MockReader {
    pub fn new(table: MockTable) -> Result<MockReader, ReaderError> {
        let mut map = HashMap::with_capacity(table.entries.len());
        for e in table.entries {
            if e.start_char >= e.end_char {
                return Err(ReaderError::InvalidInput(format!(
                    "mock entry ({}, {}, {}) has empty span [{}, {})",
                    e.question_id, e.doc_id, e.para_id, e.start_char, e.end_char
                )));
            }
            let key = (e.question_id, e.doc_id, e.para_id);
            let span = SpanPrediction {
                start_char: e.start_char,
                end_char: e.end_char,
                reader_score: e.score,
            };
            if map.insert(key.clone(), span).is_some() {
                return Err(ReaderError::InvalidInput(format!(
                    "duplicate mock entry ({}, {}, {})",
                    key.0, key.1, key.2
                )));
            }
        }
        Ok(MockReader {
            table: map,
            default_score: table.default_score,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<MockReader, ReaderError> {
        MockReader::new(MockTable::load(path)?)
    }

    pub fn default_score(&self) -> f64 {
        self.default_score
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl Reader for MockReader {
    fn read_batch(&self, requests: &[ReaderRequest<'_>]) -> Vec<Result<Option<SpanPrediction>, ReaderError>> {
        requests
            .iter()
            .map(|r| {
                let key = (
                    r.question_id.to_string(),
                    r.paragraph.doc_id.clone(),
                    r.paragraph.para_id,
                );
                Ok(self.table.get(&key).copied())
            })
            .collect()
    }
}
