//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use odqa::distant_supervision::QaExample;
use odqa::index::Paragraph;
use odqa::text::Lang;

pub const ANSWERS: [&str; 10] = [
    "Paris", "Berlin", "Madrid", "Vienna", "Lisbon", "Prague", "Dublin", "Oslo", "Athens", "Warsaw",
];

const FILLER: [&str; 12] = [
    "river", "mountain", "history", "music", "science", "garden", "winter", "market", "bridge", "harbor",
    "festival", "library",
];

pub const DOCS: usize = 15;
pub const PARAS_PER_DOC: usize = 2;

/// Question `i` is answered by paragraph `3 i` of the flattened corpus.
pub fn planted_slot(i: usize) -> usize {
    3 * i
}

pub fn slot_key(j: usize) -> (String, u32) {
    (format!("doc{:02}", j / PARAS_PER_DOC), (j % PARAS_PER_DOC) as u32)
}

fn planted_text(i: usize) -> String {
    format!("The {} site stores zeta{i} and omega{i} since ancient times.", ANSWERS[i])
}

fn filler_text(j: usize) -> String {
    let mut words: Vec<String> = (0..12).map(|t| FILLER[(j * 7 + t * 5) % FILLER.len()].to_string()).collect();
    if !j.is_multiple_of(3) {
        words.insert(4, format!("zeta{}", j % 10));
    }
    if j % 2 == 1 {
        words.insert(2, "city".into());
    }
    if j % 7 == 1 {
        words.push(format!("near {}", ANSWERS[j % 10]));
    }
    let mut s = words.join(" ");
    s.push('.');
    s
}

/// 30 paragraphs in 15 two-paragraph documents, in corpus order.
pub fn planted_paragraphs() -> Vec<Paragraph> {
    (0..DOCS * PARAS_PER_DOC)
        .map(|j| {
            let text = if j % 3 == 0 && j / 3 < ANSWERS.len() {
                planted_text(j / 3)
            } else {
                filler_text(j)
            };
            let (doc, para) = slot_key(j);
            Paragraph::new(doc, para, text)
        })
        .collect()
}

pub fn planted_questions() -> Vec<QaExample> {
    (0..ANSWERS.len())
        .map(|i| QaExample {
            question_id: format!("q{i:02}"),
            question: format!("Which city holds zeta{i} omega{i}?"),
            answers: vec![ANSWERS[i].to_string()],
            lang: Lang::En,
        })
        .collect()
}

/// Corpus JSONL with documents whose paragraphs are separated by blank lines.
pub fn planted_corpus_jsonl() -> String {
    let paras = planted_paragraphs();
    let mut out = String::new();
    for d in 0..DOCS {
        let body: Vec<&str> = paras[d * PARAS_PER_DOC..(d + 1) * PARAS_PER_DOC]
            .iter()
            .map(|p| p.text.as_str())
            .collect();
        out.push_str(&json!({"id": format!("doc{d:02}"), "contents": body.join("\n\n")}).to_string());
        out.push('\n');
    }
    out
}

/// SQuAD v1.1 document whose contexts are the planted paragraphs.
pub fn planted_squad_json() -> String {
    let paragraphs: Vec<_> = planted_questions()
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let context = planted_text(i);
            let start = context.find(ANSWERS[i]).unwrap();
            json!({
                "context": context,
                "qas": [{"id": q.question_id, "question": q.question,
                         "answers": [{"text": ANSWERS[i], "answer_start": start}]}]
            })
        })
        .collect();
    json!({"version": "1.1", "data": [{"title": "toy", "paragraphs": paragraphs}]}).to_string()
}

/// Mock reader table: every paragraph holding the answer gets the answer
/// span (10.0 when planted, 5.0 otherwise); every other paragraph sharing the
/// question's `zeta` term gets its first word with score 8.0.
pub fn planted_mock_table() -> serde_json::Value {
    let paras = planted_paragraphs();
    let mut entries = Vec::new();
    for (i, q) in planted_questions().iter().enumerate() {
        let marker = format!("zeta{i}");
        for (j, p) in paras.iter().enumerate() {
            let (start, end, score) = if let Some(byte) = find_word(&p.text, ANSWERS[i]) {
                let start = p.text[..byte].chars().count();
                let score = if j == planted_slot(i) { 10.0 } else { 5.0 };
                (start, start + ANSWERS[i].chars().count(), score)
            } else if p.text.split(|c: char| !c.is_alphanumeric()).any(|w| w == marker) {
                let first = p.text.split(' ').next().unwrap();
                (0, first.chars().count(), 8.0)
            } else {
                continue;
            };
            entries.push(json!({
                "question_id": q.question_id, "doc_id": p.doc_id, "para_id": p.para_id,
                "start_char": start, "end_char": end, "score": score
            }));
        }
    }
    json!({"default_score": 0.0, "entries": entries})
}

fn find_word(text: &str, word: &str) -> Option<usize> {
    text.match_indices(word).map(|(i, _)| i).find(|&i| {
        let before = text[..i].chars().next_back();
        let after = text[i + word.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

pub struct PlantedFiles {
    pub corpus: PathBuf,
    pub dataset: PathBuf,
    pub mock_table: PathBuf,
}

pub fn write_planted_files(dir: &Path) -> PlantedFiles {
    let files = PlantedFiles {
        corpus: dir.join("corpus.jsonl"),
        dataset: dir.join("dev.json"),
        mock_table: dir.join("mock.json"),
    };
    std::fs::write(&files.corpus, planted_corpus_jsonl()).unwrap();
    std::fs::write(&files.dataset, planted_squad_json()).unwrap();
    std::fs::write(&files.mock_table, planted_mock_table().to_string()).unwrap();
    files
}

const RANDOM_VOCAB: [&str; 24] = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet", "kilo", "lima",
    "mike", "november", "oscar", "papa", "quebec", "romeo", "sierra", "tango", "uniform", "victor", "whiskey",
    "xray",
];

/// `n` paragraphs of Zipf-ish random words, some with punctuation and case.
pub fn random_paragraphs(seed: u64, n: usize) -> Vec<Paragraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|j| {
            let len = rng.random_range(5..40);
            let words: Vec<String> = (0..len)
                .map(|_| {
                    let a = rng.random_range(0..RANDOM_VOCAB.len());
                    let b = rng.random_range(0..RANDOM_VOCAB.len());
                    let w = RANDOM_VOCAB[a.min(b)];
                    match rng.random_range(0..10) {
                        0 => w.to_uppercase(),
                        1 => format!("{w},"),
                        _ => w.to_string(),
                    }
                })
                .collect();
            Paragraph::new(format!("r{:02}", j / 3), (j % 3) as u32, words.join(" "))
        })
        .collect()
}

pub fn random_queries(seed: u64, n: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..n)
        .map(|i| {
            let len = rng.random_range(1..5);
            let mut q: Vec<String> = (0..len)
                .map(|_| RANDOM_VOCAB[rng.random_range(0..RANDOM_VOCAB.len())].to_string())
                .collect();
            if i % 4 == 0 {
                q.push(q[0].to_uppercase());
            }
            if i % 5 == 0 {
                q.push("zulu".into());
            }
            q.join(" ")
        })
        .collect()
}

/// Lowercased maximal alphanumeric runs, written without the library.
pub fn oracle_terms(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Scores every paragraph against `query` and returns the matching ones,
/// best first, ties by (doc_id, para_id).
pub fn oracle_bm25(paragraphs: &[Paragraph], query: &str, k1: f64, b: f64) -> Vec<(String, u32, f64)> {
    let docs: Vec<Vec<String>> = paragraphs.iter().map(|p| oracle_terms(&p.text)).collect();
    let n = docs.len() as f64;
    let avglen = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut df: HashMap<&str, f64> = HashMap::new();
    for d in &docs {
        let unique: HashSet<&str> = d.iter().map(String::as_str).collect();
        for t in unique {
            *df.entry(t).or_default() += 1.0;
        }
    }
    let mut terms = oracle_terms(query);
    terms.sort();
    terms.dedup();
    let mut out = Vec::new();
    for (p, d) in paragraphs.iter().zip(&docs) {
        let mut score = 0.0;
        let mut matched = false;
        for t in &terms {
            let tf = d.iter().filter(|w| *w == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            matched = true;
            let dft = df[t.as_str()];
            let idf = (1.0 + (n - dft + 0.5) / (dft + 0.5)).ln();
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avglen));
        }
        if matched {
            out.push((p.doc_id.clone(), p.para_id, score));
        }
    }
    out.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| (&a.0, a.1).cmp(&(&b.0, b.1))));
    out
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}
