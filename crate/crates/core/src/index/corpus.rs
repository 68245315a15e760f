use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{segment_document, IndexConfig, IndexError, Paragraph};

/// One line of a corpus JSONL file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub id: String,
    pub contents: String,
}

/// Reads a `{"id", "contents"}` JSONL corpus. Blank lines are skipped.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<CorpusDocument>, IndexError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| IndexError::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| IndexError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: CorpusDocument = serde_json::from_str(&line).map_err(|e| IndexError::Corpus {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

impl CorpusDocument {
    pub fn segment(&self, config: &IndexConfig) -> Vec<Paragraph> {
        segment_document(&self.id, &self.contents, config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn reads_jsonl_and_reports_bad_lines() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id": "a", "contents": "one\n\ntwo"}}"#).unwrap();
        writeln!(f).unwrap();
        writeln!(f, r#"{{"id": "b", "contents": "three"}}"#).unwrap();
        let docs = read_corpus(f.path()).unwrap();
        assert_eq!(docs.len(), 2);
        let config = IndexConfig {
            min_paragraph_chars: 0,
            ..IndexConfig::default()
        };
        assert_eq!(docs[0].segment(&config).len(), 2);

        writeln!(f, r#"{{"id": "c"}}"#).unwrap();
        let err = read_corpus(f.path()).unwrap_err();
        assert!(err.to_string().contains(":4:"), "{err}");
    }
}
