//! Paragraph-granularity inverted index with BM25 ranking.
//!
//! Every paragraph of the corpus is its own retrieval unit. A query is a bag
//! of unique terms produced by the index's analyzer; the score of paragraph
//! `p` is
//!
//! ```text
//! sum over unique query terms t:
//!     idf(t) * tf(t,p) * (k1 + 1) / (tf(t,p) + k1 * (1 - b + b * len(p) / avglen))
//! idf(t) = ln(1 + (N - df(t) + 0.5) / (df(t) + 0.5))
//! ```
//!
//! where `len(p)` counts analyzer tokens. Paragraphs that match no query term
//! are never returned, and equal scores are ordered by `(doc_id, para_id)`.

mod corpus;
mod store;

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::text::AnalyzerKind;

pub use corpus::{read_corpus, CorpusDocument};
pub use store::{FORMAT_NAME, FORMAT_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("invalid index config: {0}")]
    InvalidConfig(String),
    #[error("duplicate paragraph ({doc_id}, {para_id})")]
    DuplicateParagraph { doc_id: String, para_id: u32 },
    #[error("query analyzed with {query:?} but the index uses {index:?}")]
    AnalyzerMismatch {
        index: AnalyzerKind,
        query: AnalyzerKind,
    },
    #[error("index format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt index at {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("{path}:{line}: {message}")]
    Corpus {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IndexError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IndexError::Io {
            path: path.into(),
            source,
        }
    }
}

/// A retrieval unit: one paragraph of one document.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Paragraph {
    pub doc_id: String,
    /// Ordinal of the paragraph among the retained paragraphs of its document.
    pub para_id: u32,
    pub text: String,
}

impl Paragraph {
    pub fn new(doc_id: impl Into<String>, para_id: u32, text: impl Into<String>) -> Self {
        Paragraph {
            doc_id: doc_id.into(),
            para_id,
            text: text.into(),
        }
    }

    /// `doc_id/para_id`, used in diagnostics.
    pub fn key(&self) -> String {
        format!("{}/{}", self.doc_id, self.para_id)
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexConfig {
    pub analyzer: AnalyzerKind,
    pub k1: f64,
    pub b: f64,
    pub min_paragraph_chars: usize,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            analyzer: AnalyzerKind::EnglishLower,
            k1: 0.9,
            b: 0.4,
            min_paragraph_chars: 10,
        }
    }
}

impl IndexConfig {
    pub fn with_analyzer(analyzer: AnalyzerKind) -> Self {
        IndexConfig {
            analyzer,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), IndexError> {
        if !(self.k1.is_finite() && self.k1 > 0.0) {
            return Err(IndexError::InvalidConfig(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(IndexError::InvalidConfig(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

/// One hit of a ranked result list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedPassage {
    pub paragraph: Arc<Paragraph>,
    pub retriever_score: f64,
    /// 1-based.
    pub rank: u32,
}

/// Splits a document body into paragraphs on blank lines.
///
/// Lines holding only whitespace count as blank. Paragraph text is trimmed;
/// paragraphs shorter than `config.min_paragraph_chars` characters are
/// dropped and `para_id`s are assigned to the survivors in order.
pub fn segment_document(doc_id: &str, body: &str, config: &IndexConfig) -> Vec<Paragraph> {
    let mut paragraphs = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let flush = |current: &mut Vec<&str>, out: &mut Vec<Paragraph>| {
        if current.is_empty() {
            return;
        }
        let joined = current.join("\n");
        current.clear();
        let text = joined.trim();
        if !text.is_empty() && text.chars().count() >= config.min_paragraph_chars {
            out.push(Paragraph::new(doc_id, out.len() as u32, text));
        }
    };
    for line in body.lines() {
        if line.trim().is_empty() {
            flush(&mut current, &mut paragraphs);
        } else {
            current.push(line);
        }
    }
    flush(&mut current, &mut paragraphs);
    paragraphs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Ordinal of the paragraph in the index.
    pub paragraph: u32,
    pub tf: u32,
}

/// A query already run through an analyzer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalyzedQuery {
    pub analyzer: AnalyzerKind,
    /// Unique terms, in order of first occurrence.
    pub terms: Vec<String>,
}

impl AnalyzedQuery {
    pub fn new(analyzer: AnalyzerKind, query: &str) -> Self {
        let mut seen = HashSet::new();
        let terms = analyzer
            .terms(query)
            .into_iter()
            .filter(|t| seen.insert(t.clone()))
            .collect();
        AnalyzedQuery { analyzer, terms }
    }
}

/// Immutable inverted index. Shareable across threads once built.
#[derive(Debug, Clone)]
pub struct Index {
    config: IndexConfig,
    paragraphs: Vec<Arc<Paragraph>>,
    lengths: Vec<u32>,
    total_tokens: u64,
    postings: HashMap<String, Vec<Posting>>,
}

const BUILD_CHUNK: usize = 1024;

struct Partial {
    lengths: Vec<u32>,
    postings: HashMap<String, Vec<Posting>>,
}

fn index_chunk(offset: usize, chunk: &[Paragraph], analyzer: AnalyzerKind) -> Partial {
    let mut lengths = Vec::with_capacity(chunk.len());
    let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
    for (j, p) in chunk.iter().enumerate() {
        let terms = analyzer.terms(&p.text);
        lengths.push(terms.len() as u32);
        let mut counts: HashMap<String, u32> = HashMap::new();
        for t in terms {
            *counts.entry(t).or_default() += 1;
        }
        let ordinal = (offset + j) as u32;
        for (term, tf) in counts {
            postings.entry(term).or_default().push(Posting {
                paragraph: ordinal,
                tf,
            });
        }
    }
    Partial { lengths, postings }
}

impl Index {
    /// Builds an index, tokenizing in parallel.
    pub fn build(
        paragraphs: impl IntoIterator<Item = Paragraph>,
        config: IndexConfig,
    ) -> Result<Index, IndexError> {
        Self::build_partitioned(paragraphs, config, BUILD_CHUNK)
    }

    /// Builds from partitions of `partition_size` paragraphs, indexed
    /// independently and merged in stream order. The result does not depend
    /// on `partition_size`.
    pub fn build_partitioned(
        paragraphs: impl IntoIterator<Item = Paragraph>,
        config: IndexConfig,
        partition_size: usize,
    ) -> Result<Index, IndexError> {
        config.validate()?;
        let paragraphs: Vec<Paragraph> = paragraphs.into_iter().collect();
        let mut seen = HashSet::with_capacity(paragraphs.len());
        for p in &paragraphs {
            if !seen.insert((p.doc_id.as_str(), p.para_id)) {
                return Err(IndexError::DuplicateParagraph {
                    doc_id: p.doc_id.clone(),
                    para_id: p.para_id,
                });
            }
        }
        if paragraphs.len() > u32::MAX as usize {
            return Err(IndexError::InvalidConfig("more than 2^32 paragraphs".into()));
        }

        let partition_size = partition_size.max(1);
        let partials: Vec<Partial> = paragraphs
            .par_chunks(partition_size)
            .enumerate()
            .map(|(i, chunk)| index_chunk(i * partition_size, chunk, config.analyzer))
            .collect();

        let mut lengths = Vec::with_capacity(paragraphs.len());
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        for partial in partials {
            lengths.extend(partial.lengths);
            for (term, list) in partial.postings {
                postings.entry(term).or_default().extend(list);
            }
        }
        let total_tokens = lengths.iter().map(|&l| l as u64).sum();
        Ok(Index {
            config,
            paragraphs: paragraphs.into_iter().map(Arc::new).collect(),
            lengths,
            total_tokens,
            postings,
        })
    }

    pub(crate) fn from_parts(
        config: IndexConfig,
        paragraphs: Vec<Arc<Paragraph>>,
        lengths: Vec<u32>,
        postings: HashMap<String, Vec<Posting>>,
    ) -> Index {
        let total_tokens = lengths.iter().map(|&l| l as u64).sum();
        Index {
            config,
            paragraphs,
            lengths,
            total_tokens,
            postings,
        }
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn analyzer(&self) -> AnalyzerKind {
        self.config.analyzer
    }

    /// Total paragraph count `N`.
    pub fn num_paragraphs(&self) -> usize {
        self.paragraphs.len()
    }

    pub fn num_terms(&self) -> usize {
        self.postings.len()
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn avg_length(&self) -> f64 {
        if self.paragraphs.is_empty() {
            0.0
        } else {
            self.total_tokens as f64 / self.paragraphs.len() as f64
        }
    }

    pub fn paragraphs(&self) -> &[Arc<Paragraph>] {
        &self.paragraphs
    }

    pub fn paragraph(&self, ordinal: u32) -> Option<&Arc<Paragraph>> {
        self.paragraphs.get(ordinal as usize)
    }

    /// Token length of the paragraph with the given ordinal.
    pub fn length(&self, ordinal: u32) -> Option<u32> {
        self.lengths.get(ordinal as usize).copied()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub(crate) fn posting_map(&self) -> &HashMap<String, Vec<Posting>> {
        &self.postings
    }

    pub(crate) fn lengths(&self) -> &[u32] {
        &self.lengths
    }

    /// Top-`k` paragraphs for `query`, analyzed with the index's analyzer.
    pub fn search(&self, query: &str, k: usize) -> Vec<RetrievedPassage> {
        self.rank(&AnalyzedQuery::new(self.config.analyzer, query), k)
    }

    /// Like [`Index::search`], for a query analyzed elsewhere. Fails when the
    /// query was analyzed with a different analyzer than the index.
    pub fn search_analyzed(
        &self,
        query: &AnalyzedQuery,
        k: usize,
    ) -> Result<Vec<RetrievedPassage>, IndexError> {
        if query.analyzer != self.config.analyzer {
            return Err(IndexError::AnalyzerMismatch {
                index: self.config.analyzer,
                query: query.analyzer,
            });
        }
        Ok(self.rank(query, k))
    }

    fn rank(&self, query: &AnalyzedQuery, k: usize) -> Vec<RetrievedPassage> {
        if k == 0 || self.paragraphs.is_empty() {
            return Vec::new();
        }
        let n = self.paragraphs.len() as f64;
        let avglen = self.avg_length();
        let IndexConfig { k1, b, .. } = self.config;

        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in &query.terms {
            let Some(list) = self.postings.get(term) else {
                continue;
            };
            let df = list.len() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            for posting in list {
                let tf = posting.tf as f64;
                let len = self.lengths[posting.paragraph as usize] as f64;
                let norm = k1 * (1.0 - b + b * len / avglen);
                *scores.entry(posting.paragraph).or_insert(0.0) +=
                    idf * tf * (k1 + 1.0) / (tf + norm);
            }
        }

        let mut hits: Vec<(u32, f64)> = scores.into_iter().collect();
        let order = |a: &(u32, f64), b: &(u32, f64)| -> Ordering {
            b.1.total_cmp(&a.1).then_with(|| {
                let pa = &self.paragraphs[a.0 as usize];
                let pb = &self.paragraphs[b.0 as usize];
                pa.doc_id
                    .cmp(&pb.doc_id)
                    .then(pa.para_id.cmp(&pb.para_id))
            })
        };
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, order);
            hits.truncate(k);
        }
        hits.sort_unstable_by(order);
        hits.into_iter()
            .enumerate()
            .map(|(i, (ordinal, score))| RetrievedPassage {
                paragraph: Arc::clone(&self.paragraphs[ordinal as usize]),
                retriever_score: score,
                rank: i as u32 + 1,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(min: usize) -> IndexConfig {
        IndexConfig {
            min_paragraph_chars: min,
            ..IndexConfig::default()
        }
    }

    #[test]
    fn segment_examples() {
        assert_eq!(
            segment_document("d1", "A.\n\nB.", &cfg(0)),
            vec![Paragraph::new("d1", 0, "A."), Paragraph::new("d1", 1, "B.")]
        );
        assert!(segment_document("d1", "", &cfg(0)).is_empty());
        assert_eq!(
            segment_document("d1", "xx\n\nlong paragraph here", &cfg(5)),
            vec![Paragraph::new("d1", 0, "long paragraph here")]
        );
    }

    #[test]
    fn segment_keeps_single_newlines_and_trims() {
        let body = "  first line\nsecond line  \n \t\n\n\nthird\r\n\r\nfourth ";
        let paras = segment_document("d", body, &cfg(0));
        let texts: Vec<&str> = paras.iter().map(|p| p.text.as_str()).collect();
        assert_eq!(texts, vec!["first line\nsecond line", "third", "fourth"]);
        assert_eq!(paras[2].para_id, 2);
    }

    #[test]
    fn counting() {
        let paras = ["a", "b", "a"]
            .iter()
            .enumerate()
            .map(|(i, t)| Paragraph::new(format!("d{i}"), 0, *t));
        let index = Index::build(paras, IndexConfig::default()).unwrap();
        assert_eq!(index.num_paragraphs(), 3);
        assert_eq!(index.doc_freq("a"), 2);
        assert_eq!(index.doc_freq("b"), 1);
        assert_eq!(index.avg_length(), 1.0);
    }

    #[test]
    fn empty_index_returns_nothing() {
        let index = Index::build(Vec::new(), IndexConfig::default()).unwrap();
        assert_eq!(index.num_paragraphs(), 0);
        assert!(index.search("anything", 10).is_empty());
    }

    #[test]
    fn duplicate_paragraph_is_rejected() {
        let paras = vec![Paragraph::new("d", 0, "x"), Paragraph::new("d", 0, "y")];
        let err = Index::build(paras, IndexConfig::default()).unwrap_err();
        assert!(err.to_string().contains("(d, 0)"), "{err}");
    }

    #[test]
    fn bad_config_is_rejected() {
        for (k1, b) in [(0.0, 0.4), (-1.0, 0.4), (0.9, 1.5), (0.9, -0.1), (f64::NAN, 0.4)] {
            let config = IndexConfig {
                k1,
                b,
                ..IndexConfig::default()
            };
            assert!(Index::build(Vec::new(), config).is_err());
        }
    }

    #[test]
    fn single_paragraph_score_by_hand() {
        // N = df = 1: idf = ln(1 + 0.5 / 1.5); len = avglen so the tf part is 1.9 / 1.9.
        let index = Index::build(vec![Paragraph::new("d", 0, "word")], IndexConfig::default()).unwrap();
        let hits = index.search("word", 10);
        assert_eq!(hits.len(), 1);
        let expected = (4.0f64 / 3.0).ln();
        assert!((hits[0].retriever_score - expected).abs() < 1e-15);
        assert_eq!(hits[0].rank, 1);
    }

    #[test]
    fn no_match_and_zero_k() {
        let index = Index::build(vec![Paragraph::new("d", 0, "word")], IndexConfig::default()).unwrap();
        assert!(index.search("other", 10).is_empty());
        assert!(index.search("word", 0).is_empty());
    }

    #[test]
    fn ties_break_on_doc_then_para() {
        let paras = vec![
            Paragraph::new("b", 0, "same text"),
            Paragraph::new("a", 1, "same text"),
            Paragraph::new("a", 0, "same text"),
        ];
        let index = Index::build(paras, IndexConfig::default()).unwrap();
        let keys: Vec<String> = index.search("text", 3).iter().map(|h| h.paragraph.key()).collect();
        assert_eq!(keys, vec!["a/0", "a/1", "b/0"]);
    }

    #[test]
    fn repeated_query_terms_count_once() {
        let paras = vec![Paragraph::new("d", 0, "alpha beta"), Paragraph::new("e", 0, "gamma")];
        let index = Index::build(paras, IndexConfig::default()).unwrap();
        let once = index.search("alpha", 1)[0].retriever_score;
        let thrice = index.search("alpha Alpha ALPHA", 1)[0].retriever_score;
        assert_eq!(once, thrice);
    }

    #[test]
    fn analyzer_mismatch_is_an_error() {
        let index = Index::build(vec![Paragraph::new("d", 0, "北京")], IndexConfig::default()).unwrap();
        let q = AnalyzedQuery::new(AnalyzerKind::CjkBigram, "北京");
        assert!(matches!(
            index.search_analyzed(&q, 5),
            Err(IndexError::AnalyzerMismatch { .. })
        ));
        let q = AnalyzedQuery::new(AnalyzerKind::EnglishLower, "北京");
        assert_eq!(index.search_analyzed(&q, 5).unwrap().len(), 1);
    }
}
