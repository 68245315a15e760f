//! On-disk index layout.
//!
//! An index is a directory with three files:
//!
//! * `meta.json`: format name and version, the [`IndexConfig`], paragraph,
//!   token and term counts, and SHA-256 digests of the two data files.
//! * `paragraphs.jsonl`: one `{"doc_id", "para_id", "text", "length"}`
//!   object per line, in ordinal order.
//! * `postings.bin`: the magic bytes `ODQAPOST`, a `u32` format version and a
//!   `u64` term count, then for each term in byte-wise ascending order a
//!   `u32` UTF-8 length, the term bytes, a `u32` posting count and that many
//!   `(u32 ordinal, u32 tf)` pairs in ascending ordinal order. All integers
//!   are little-endian.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Index, IndexConfig, IndexError, Paragraph, Posting};

pub const FORMAT_NAME: &str = "odqa-paragraph-index";
pub const FORMAT_VERSION: u32 = 1;

const META_FILE: &str = "meta.json";
const PARAGRAPHS_FILE: &str = "paragraphs.jsonl";
const POSTINGS_FILE: &str = "postings.bin";
const MAGIC: &[u8; 8] = b"ODQAPOST";

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format: String,
    version: u32,
    config: IndexConfig,
    num_paragraphs: u64,
    total_tokens: u64,
    avg_length: f64,
    num_terms: u64,
    paragraphs_sha256: String,
    postings_sha256: String,
}

#[derive(Serialize, Deserialize)]
struct ParagraphRow {
    doc_id: String,
    para_id: u32,
    text: String,
    length: u32,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Index {
    /// Writes the index into `dir`, creating it if needed.
    pub fn persist(&self, dir: impl AsRef<Path>) -> Result<(), IndexError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| IndexError::io(dir, e))?;

        let mut paragraphs = Vec::new();
        for (p, &length) in self.paragraphs().iter().zip(self.lengths()) {
            let row = ParagraphRow {
                doc_id: p.doc_id.clone(),
                para_id: p.para_id,
                text: p.text.clone(),
                length,
            };
            serde_json::to_writer(&mut paragraphs, &row).expect("in-memory write");
            paragraphs.push(b'\n');
        }

        let mut terms: Vec<(&String, &Vec<Posting>)> = self.posting_map().iter().collect();
        terms.sort_unstable_by(|a, b| a.0.as_bytes().cmp(b.0.as_bytes()));
        let mut postings = Vec::new();
        postings.extend_from_slice(MAGIC);
        postings.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        postings.extend_from_slice(&(terms.len() as u64).to_le_bytes());
        for (term, list) in terms {
            postings.extend_from_slice(&(term.len() as u32).to_le_bytes());
            postings.extend_from_slice(term.as_bytes());
            postings.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for p in list {
                postings.extend_from_slice(&p.paragraph.to_le_bytes());
                postings.extend_from_slice(&p.tf.to_le_bytes());
            }
        }

        let meta = Meta {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            config: *self.config(),
            num_paragraphs: self.num_paragraphs() as u64,
            total_tokens: self.total_tokens(),
            avg_length: self.avg_length(),
            num_terms: self.num_terms() as u64,
            paragraphs_sha256: sha256_hex(&paragraphs),
            postings_sha256: sha256_hex(&postings),
        };
        let mut meta_bytes = serde_json::to_vec_pretty(&meta).expect("in-memory write");
        meta_bytes.push(b'\n');

        write_file(&dir.join(PARAGRAPHS_FILE), &paragraphs)?;
        write_file(&dir.join(POSTINGS_FILE), &postings)?;
        // Written last so a half-written directory never opens.
        write_file(&dir.join(META_FILE), &meta_bytes)
    }

    /// Opens an index written by [`Index::persist`].
    pub fn open(dir: impl AsRef<Path>) -> Result<Index, IndexError> {
        let dir = dir.as_ref();
        let meta_path = dir.join(META_FILE);
        let meta_bytes = fs::read(&meta_path).map_err(|e| IndexError::io(&meta_path, e))?;
        let raw: serde_json::Value = serde_json::from_slice(&meta_bytes)
            .map_err(|e| corrupt(&meta_path, e.to_string()))?;
        if raw.get("format").and_then(|v| v.as_str()) != Some(FORMAT_NAME) {
            return Err(corrupt(&meta_path, "not an odqa paragraph index"));
        }
        let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != FORMAT_VERSION {
            return Err(IndexError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let meta: Meta =
            serde_json::from_value(raw).map_err(|e| corrupt(&meta_path, e.to_string()))?;
        meta.config
            .validate()
            .map_err(|e| corrupt(&meta_path, e.to_string()))?;

        let para_path = dir.join(PARAGRAPHS_FILE);
        let para_bytes = fs::read(&para_path).map_err(|e| IndexError::io(&para_path, e))?;
        if sha256_hex(&para_bytes) != meta.paragraphs_sha256 {
            return Err(corrupt(&para_path, "digest mismatch"));
        }
        let mut paragraphs = Vec::with_capacity(meta.num_paragraphs as usize);
        let mut lengths = Vec::with_capacity(meta.num_paragraphs as usize);
        for (i, line) in BufReader::new(para_bytes.as_slice()).lines().enumerate() {
            let line = line.map_err(|e| corrupt(&para_path, e.to_string()))?;
            let row: ParagraphRow = serde_json::from_str(&line)
                .map_err(|e| corrupt(&para_path, format!("line {}: {e}", i + 1)))?;
            lengths.push(row.length);
            paragraphs.push(Arc::new(Paragraph::new(row.doc_id, row.para_id, row.text)));
        }
        if paragraphs.len() as u64 != meta.num_paragraphs {
            return Err(corrupt(&para_path, "paragraph count disagrees with meta.json"));
        }

        let post_path = dir.join(POSTINGS_FILE);
        let post_bytes = fs::read(&post_path).map_err(|e| IndexError::io(&post_path, e))?;
        if sha256_hex(&post_bytes) != meta.postings_sha256 {
            return Err(corrupt(&post_path, "digest mismatch"));
        }
        let postings = decode_postings(&post_bytes, paragraphs.len())
            .map_err(|reason| corrupt(&post_path, reason))?;
        if postings.len() as u64 != meta.num_terms {
            return Err(corrupt(&post_path, "term count disagrees with meta.json"));
        }

        let mut tf_sums = vec![0u64; paragraphs.len()];
        for list in postings.values() {
            for p in list {
                tf_sums[p.paragraph as usize] += p.tf as u64;
            }
        }
        if tf_sums.iter().zip(&lengths).any(|(&s, &l)| s != l as u64) {
            return Err(corrupt(&post_path, "postings disagree with paragraph lengths"));
        }

        let index = Index::from_parts(meta.config, paragraphs, lengths, postings);
        if index.total_tokens() != meta.total_tokens {
            return Err(corrupt(&meta_path, "token count disagrees with paragraphs.jsonl"));
        }
        Ok(index)
    }
}

fn corrupt(path: &Path, reason: impl Into<String>) -> IndexError {
    IndexError::Corrupt {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn write_file(path: &PathBuf, bytes: &[u8]) -> Result<(), IndexError> {
    let mut f = fs::File::create(path).map_err(|e| IndexError::io(path, e))?;
    f.write_all(bytes).map_err(|e| IndexError::io(path, e))?;
    f.sync_all().map_err(|e| IndexError::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode_postings(bytes: &[u8], num_paragraphs: usize) -> Result<HashMap<String, Vec<Posting>>, String> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err("bad magic".into());
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(format!("postings version {version}"));
    }
    let num_terms = cur.u64()?;
    let mut postings = HashMap::with_capacity(num_terms.min(1 << 24) as usize);
    let mut previous: Option<&[u8]> = None;
    for _ in 0..num_terms {
        let len = cur.u32()? as usize;
        let term_bytes = cur.take(len)?;
        if previous.is_some_and(|p| p >= term_bytes) {
            return Err("terms not in ascending order".into());
        }
        previous = Some(term_bytes);
        let term = std::str::from_utf8(term_bytes).map_err(|e| e.to_string())?;
        let count = cur.u32()? as usize;
        if count == 0 {
            return Err(format!("empty posting list for `{term}`"));
        }
        let mut list = Vec::with_capacity(count);
        for _ in 0..count {
            let paragraph = cur.u32()?;
            let tf = cur.u32()?;
            if paragraph as usize >= num_paragraphs || tf == 0 {
                return Err(format!("bad posting ({paragraph}, {tf}) for `{term}`"));
            }
            if list.last().is_some_and(|p: &Posting| p.paragraph >= paragraph) {
                return Err(format!("unsorted postings for `{term}`"));
            }
            list.push(Posting { paragraph, tf });
        }
        postings.insert(term.to_string(), list);
    }
    if cur.pos != bytes.len() {
        return Err("trailing bytes".into());
    }
    Ok(postings)
}
