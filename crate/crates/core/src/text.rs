//! Tokenization and answer normalization.
//!
//! Two analyzers share one [`Token`] type: [`AnalyzerKind::EnglishLower`]
//! splits on anything that is not a Unicode letter or digit and lowercases,
//! [`AnalyzerKind::CjkBigram`] additionally cuts runs of CJK ideographs into
//! overlapping character bigrams. All offsets are in `char`s (Unicode scalar
//! values), never bytes.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Language of a dataset, index or answer string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    En,
    Zh,
}

impl Lang {
    pub fn as_str(self) -> &'static str {
        match self {
            Lang::En => "en",
            Lang::Zh => "zh",
        }
    }

    /// The analyzer an index over text in this language is built with.
    pub fn analyzer(self) -> AnalyzerKind {
        match self {
            Lang::En => AnalyzerKind::EnglishLower,
            Lang::Zh => AnalyzerKind::CjkBigram,
        }
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Lang {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "en" => Ok(Lang::En),
            "zh" => Ok(Lang::Zh),
            other => Err(format!("unknown language `{other}` (expected en or zh)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyzerKind {
    EnglishLower,
    CjkBigram,
}

impl AnalyzerKind {
    pub fn tokenize(self, text: &str) -> Vec<Token> {
        match self {
            AnalyzerKind::EnglishLower => tokenize_english(text),
            AnalyzerKind::CjkBigram => tokenize_cjk_bigrams(text),
        }
    }

    /// Token surfaces only, in order.
    pub fn terms(self, text: &str) -> Vec<String> {
        self.tokenize(text).into_iter().map(|t| t.surface).collect()
    }

    pub fn lang(self) -> Lang {
        match self {
            AnalyzerKind::EnglishLower => Lang::En,
            AnalyzerKind::CjkBigram => Lang::Zh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub surface: String,
    /// Inclusive character offset into the source text.
    pub start_char: usize,
    /// Exclusive character offset into the source text.
    pub end_char: usize,
}

impl Token {
    fn new(surface: String, start_char: usize, end_char: usize) -> Self {
        debug_assert!(start_char < end_char);
        Token {
            surface,
            start_char,
            end_char,
        }
    }
}

/// True for characters that belong inside a word token.
#[inline]
pub fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// CJK Unified Ideographs, basic block and extension A.
#[inline]
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32, 0x4E00..=0x9FFF | 0x3400..=0x4DBF)
}

/// Maximal runs of letters/digits, lowercased.
pub fn tokenize_english(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !is_word_char(chars[i]) {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && is_word_char(chars[i]) {
            i += 1;
        }
        tokens.push(Token::new(lowercase(&chars[start..i]), start, i));
    }
    tokens
}

/// Overlapping bigrams inside CJK runs, English rule everywhere else.
///
/// A CJK run of a single ideograph yields that ideograph as a unigram.
pub fn tokenize_cjk_bigrams(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if is_cjk(c) {
            let start = i;
            while i < chars.len() && is_cjk(chars[i]) {
                i += 1;
            }
            if i - start == 1 {
                tokens.push(Token::new(c.to_string(), start, i));
            } else {
                for p in start..i - 1 {
                    tokens.push(Token::new(chars[p..p + 2].iter().collect(), p, p + 2));
                }
            }
        } else if is_word_char(c) {
            let start = i;
            while i < chars.len() && is_word_char(chars[i]) && !is_cjk(chars[i]) {
                i += 1;
            }
            tokens.push(Token::new(lowercase(&chars[start..i]), start, i));
        } else {
            i += 1;
        }
    }
    tokens
}

fn lowercase(chars: &[char]) -> String {
    chars.iter().flat_map(|c| c.to_lowercase()).collect()
}

// ASCII punctuation (includes symbols such as `$` and `+`), every Unicode P*
// category, the CJK symbols/punctuation block, CJK compatibility and small
// form variants, and the full-width counterparts of ASCII punctuation.
static PUNCTUATION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"[[:punct:]\p{P}\x{3001}-\x{303F}\x{FE30}-\x{FE6F}\x{FF01}-\x{FF0F}\x{FF1A}-\x{FF20}\x{FF3B}-\x{FF40}\x{FF5B}-\x{FF65}]",
    )
    .expect("punctuation pattern")
});

static ARTICLES: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(a|an|the)\b").expect("article pattern"));

/// SQuAD-style answer normalization.
///
/// `en`: lowercase, drop punctuation, drop the articles a/an/the, collapse
/// whitespace. `zh`: lowercase, drop punctuation and every whitespace
/// character.
pub fn normalize_answer(text: &str, lang: Lang) -> String {
    let lower = text.to_lowercase();
    let no_punct = PUNCTUATION.replace_all(&lower, "");
    match lang {
        Lang::En => {
            let no_articles = ARTICLES.replace_all(&no_punct, " ");
            no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
        }
        Lang::Zh => no_punct.chars().filter(|c| !c.is_whitespace()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spans(tokens: &[Token]) -> Vec<(&str, usize, usize)> {
        tokens
            .iter()
            .map(|t| (t.surface.as_str(), t.start_char, t.end_char))
            .collect()
    }

    #[test]
    fn english_basic() {
        let toks = tokenize_english("The Cat sat.");
        assert_eq!(spans(&toks), vec![("the", 0, 3), ("cat", 4, 7), ("sat", 8, 11)]);
        assert!(tokenize_english("").is_empty());
        assert_eq!(
            spans(&tokenize_english("BM25-ranked")),
            vec![("bm25", 0, 4), ("ranked", 5, 11)]
        );
    }

    #[test]
    fn english_accented_words_stay_whole() {
        assert_eq!(
            spans(&tokenize_english("Beyoncé's café")),
            vec![("beyoncé", 0, 7), ("s", 8, 9), ("café", 10, 14)]
        );
    }

    #[test]
    fn cjk_bigrams() {
        assert_eq!(
            spans(&tokenize_cjk_bigrams("中国人")),
            vec![("中国", 0, 2), ("国人", 1, 3)]
        );
        assert_eq!(spans(&tokenize_cjk_bigrams("中")), vec![("中", 0, 1)]);
        assert_eq!(
            spans(&tokenize_cjk_bigrams("北京BM25")),
            vec![("北京", 0, 2), ("bm25", 2, 6)]
        );
        assert_eq!(
            spans(&tokenize_cjk_bigrams("我，在 北京大学")),
            vec![("我", 0, 1), ("在", 2, 3), ("北京", 4, 6), ("京大", 5, 7), ("大学", 6, 8)]
        );
    }

    #[test]
    fn english_analyzer_keeps_ideograph_runs_whole() {
        assert_eq!(spans(&tokenize_english("北京BM25")), vec![("北京bm25", 0, 6)]);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_answer("The Eiffel Tower!", Lang::En), "eiffel tower");
        assert_eq!(normalize_answer("cat", Lang::En), "cat");
        assert_eq!(normalize_answer("北京 大学。", Lang::Zh), "北京大学");
        assert_eq!(normalize_answer("an apple a day", Lang::En), "apple day");
        assert_eq!(normalize_answer("Atheist", Lang::En), "atheist");
        assert_eq!(normalize_answer("$3.5 million", Lang::En), "35 million");
    }

    #[test]
    fn normalize_strips_unicode_and_fullwidth_punctuation() {
        assert_eq!(normalize_answer("1939–1945", Lang::En), "19391945");
        assert_eq!(normalize_answer("«Le Monde»", Lang::En), "le monde");
        assert_eq!(normalize_answer("「北京」，（中国）！", Lang::Zh), "北京中国");
        assert_eq!(normalize_answer("ＢＭ２５＋", Lang::Zh), "ｂｍ２５");
    }

    #[test]
    fn zh_keeps_articles() {
        assert_eq!(normalize_answer("the 北京", Lang::Zh), "the北京");
    }

    fn check_offsets(text: &str, kind: AnalyzerKind) {
        let chars: Vec<char> = text.chars().collect();
        let toks = kind.tokenize(text);
        for t in &toks {
            assert!(t.start_char < t.end_char && t.end_char <= chars.len());
            let slice: String = chars[t.start_char..t.end_char].iter().collect();
            assert_eq!(slice.to_lowercase(), t.surface);
        }
        for w in toks.windows(2) {
            assert!(w[0].start_char < w[1].start_char);
            let cjk_pair = is_cjk(chars[w[0].start_char]) && is_cjk(chars[w[1].start_char]);
            if kind == AnalyzerKind::CjkBigram && cjk_pair && w[0].end_char > w[1].start_char {
                assert_eq!(w[0].end_char - w[1].start_char, 1);
            } else {
                assert!(w[0].end_char <= w[1].start_char);
            }
        }
    }

    fn mixed_text() -> impl Strategy<Value = String> {
        proptest::collection::vec(
            prop_oneof![
                Just(' '),
                Just('.'),
                Just('-'),
                Just('。'),
                Just('，'),
                Just('中'),
                Just('国'),
                Just('人'),
                Just('é'),
                Just('A'),
                Just('z'),
                Just('7'),
                Just('İ'),
                any::<char>(),
            ],
            0..40,
        )
        .prop_map(|v| v.into_iter().collect())
    }

    proptest! {
        #[test]
        fn english_offsets_are_consistent(text in mixed_text()) {
            check_offsets(&text, AnalyzerKind::EnglishLower);
        }

        #[test]
        fn cjk_offsets_are_consistent(text in mixed_text()) {
            check_offsets(&text, AnalyzerKind::CjkBigram);
        }

        #[test]
        fn tokenization_is_deterministic(text in mixed_text()) {
            prop_assert_eq!(tokenize_cjk_bigrams(&text), tokenize_cjk_bigrams(&text));
            prop_assert_eq!(tokenize_english(&text), tokenize_english(&text));
        }

        #[test]
        fn normalize_is_idempotent(text in mixed_text(), zh in any::<bool>()) {
            let lang = if zh { Lang::Zh } else { Lang::En };
            let once = normalize_answer(&text, lang);
            prop_assert_eq!(normalize_answer(&once, lang), once.clone());
        }

        #[test]
        fn normalize_is_idempotent_on_article_soup(
            words in proptest::collection::vec(
                prop_oneof![Just("a"), Just("an"), Just("the"), Just("The"), Just("x"), Just("€"), Just("a-the"), Just("ánd")],
                0..12,
            )
        ) {
            let text = words.join(" ");
            let once = normalize_answer(&text, Lang::En);
            prop_assert_eq!(normalize_answer(&once, Lang::En), once.clone());
        }
    }
}
