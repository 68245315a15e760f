use crate::text::{is_word_char, Lang};

/// An answer occurrence inside a paragraph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerSpan {
    pub start_char: usize,
    /// The paragraph's own text at the match, not the answer as given.
    pub text: String,
}

impl AnswerSpan {
    pub fn end_char(&self) -> usize {
        self.start_char + self.text.chars().count()
    }
}

#[inline]
fn fold(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

/// Earliest occurrence of any answer in `paragraph`.
///
/// For `en` the match is case-insensitive and may not cut through a word:
/// neither end of the match may fall between two letters/digits. For `zh`
/// any exact substring counts. Among matches at the same start the longest
/// wins. Answers are trimmed first; blank answers never match.
pub fn find_answer_span<S: AsRef<str>>(paragraph: &str, answers: &[S], lang: Lang) -> Option<AnswerSpan> {
    let chars: Vec<char> = paragraph.chars().collect();
    let haystack: Vec<char> = match lang {
        Lang::En => chars.iter().map(|&c| fold(c)).collect(),
        Lang::Zh => chars.clone(),
    };
    let aligned = |pos: usize| -> bool {
        pos == 0 || pos == chars.len() || !(is_word_char(chars[pos - 1]) && is_word_char(chars[pos]))
    };

    let mut best: Option<(usize, usize)> = None;
    for answer in answers {
        let needle: Vec<char> = match lang {
            Lang::En => answer.as_ref().trim().chars().map(fold).collect(),
            Lang::Zh => answer.as_ref().trim().chars().collect(),
        };
        if needle.is_empty() || needle.len() > haystack.len() {
            continue;
        }
        let last_start = match best {
            Some((s, _)) => s.min(haystack.len() - needle.len()),
            None => haystack.len() - needle.len(),
        };
        let hit = (0..=last_start).find(|&s| {
            haystack[s..s + needle.len()] == needle[..]
                && (lang == Lang::Zh || (aligned(s) && aligned(s + needle.len())))
        });
        if let Some(s) = hit {
            let better = match best {
                None => true,
                Some((bs, bl)) => s < bs || (s == bs && needle.len() > bl),
            };
            if better {
                best = Some((s, needle.len()));
            }
        }
    }
    best.map(|(start, len)| AnswerSpan {
        start_char: start,
        text: chars[start..start + len].iter().collect(),
    })
}
