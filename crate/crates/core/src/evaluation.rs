//! Exact match, token-level F1 and retrieval recall.
//!
//! EM and F1 compare normalized strings (see [`normalize_answer`]) and take
//! the best score over all gold answers. English F1 counts whitespace tokens
//! of the normalized strings, Chinese F1 counts characters. Recall is the
//! fraction of questions with at least one retrieved paragraph containing a
//! gold answer, using the same matcher as data augmentation; it is unrelated
//! to the recall inside F1.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::ser::{SerializeStruct, Serializer};
use serde::{Deserialize, Serialize};

use crate::distant_supervision::{find_answer_span, QaExample};
use crate::index::RetrievedPassage;
use crate::text::{normalize_answer, Lang};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("no retrieval results for question `{0}`")]
    MissingRetrieval(String),
    #[error("duplicate question id `{0}`")]
    DuplicateQuestion(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnswerSet {
    pub question_id: String,
    pub answers: Vec<String>,
    pub lang: Lang,
}

impl From<&QaExample> for GoldAnswerSet {
    fn from(q: &QaExample) -> Self {
        GoldAnswerSet {
            question_id: q.question_id.clone(),
            answers: q.answers.clone(),
            lang: q.lang,
        }
    }
}

/// 1.0 when the normalized prediction equals some normalized gold answer.
pub fn exact_match(prediction: &str, gold: &GoldAnswerSet) -> f64 {
    let pred = normalize_answer(prediction, gold.lang);
    let hit = gold
        .answers
        .iter()
        .any(|a| normalize_answer(a, gold.lang) == pred);
    if hit {
        1.0
    } else {
        0.0
    }
}

fn f1_tokens(normalized: &str, lang: Lang) -> Vec<String> {
    match lang {
        Lang::En => normalized.split_whitespace().map(str::to_string).collect(),
        Lang::Zh => normalized.chars().map(String::from).collect(),
    }
}

fn pair_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best multiset-overlap F1 between the prediction and any gold answer.
pub fn token_f1(prediction: &str, gold: &GoldAnswerSet) -> f64 {
    let pred = f1_tokens(&normalize_answer(prediction, gold.lang), gold.lang);
    gold.answers
        .iter()
        .map(|a| pair_f1(&pred, &f1_tokens(&normalize_answer(a, gold.lang), gold.lang)))
        .fold(0.0, f64::max)
}

/// True when any of `passages` contains a gold answer.
pub fn answer_in_passages(gold: &GoldAnswerSet, passages: &[RetrievedPassage]) -> bool {
    passages
        .iter()
        .any(|p| find_answer_span(&p.paragraph.text, &gold.answers, gold.lang).is_some())
}

/// Fraction of questions with a gold answer in some retrieved paragraph.
/// An empty question list has recall 0.
pub fn retrieval_recall(
    questions: &[GoldAnswerSet],
    retrieved: &HashMap<String, Vec<RetrievedPassage>>,
) -> Result<f64, EvalError> {
    let mut found = 0usize;
    for q in questions {
        let passages = retrieved
            .get(&q.question_id)
            .ok_or_else(|| EvalError::MissingRetrieval(q.question_id.clone()))?;
        if answer_in_passages(q, passages) {
            found += 1;
        }
    }
    Ok(if questions.is_empty() {
        0.0
    } else {
        found as f64 / questions.len() as f64
    })
}

/// Neumaier-compensated mean.
fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut compensation, mut n) = (0.0f64, 0.0f64, 0usize);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            compensation += (sum - t) + v;
        } else {
            compensation += (v - t) + sum;
        }
        sum = t;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (sum + compensation) / n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionScore {
    pub question_id: String,
    pub prediction: String,
    pub em: f64,
    pub f1: f64,
    pub answer_found_in_retrieval: bool,
}

/// Scores of one run. Serializes with every float fixed to six decimals and
/// `per_question` sorted by question id.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub em: f64,
    pub f1: f64,
    pub recall: f64,
    pub num_questions: usize,
    pub mu: f64,
    pub k: usize,
    /// Gold questions that had no prediction; they score 0.
    pub missing_predictions: Vec<String>,
    pub per_question: Vec<QuestionScore>,
}

/// Describes the "contains the answer" test behind `recall`.
pub const RECALL_MATCHER: &str =
    "en: case-insensitive substring aligned to word boundaries; zh: exact substring";

struct Fixed6(f64);

impl Serialize for Fixed6 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let raw = serde_json::value::RawValue::from_string(format!("{:.6}", self.0))
            .map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

impl Serialize for QuestionScore {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("QuestionScore", 5)?;
        st.serialize_field("question_id", &self.question_id)?;
        st.serialize_field("prediction", &self.prediction)?;
        st.serialize_field("em", &Fixed6(self.em))?;
        st.serialize_field("f1", &Fixed6(self.f1))?;
        st.serialize_field("answer_found_in_retrieval", &self.answer_found_in_retrieval)?;
        st.end()
    }
}

impl Serialize for EvalReport {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("EvalReport", 9)?;
        st.serialize_field("em", &Fixed6(self.em))?;
        st.serialize_field("f1", &Fixed6(self.f1))?;
        st.serialize_field("recall", &Fixed6(self.recall))?;
        st.serialize_field("num_questions", &self.num_questions)?;
        st.serialize_field("mu", &Fixed6(self.mu))?;
        st.serialize_field("k", &self.k)?;
        st.serialize_field("recall_matcher", RECALL_MATCHER)?;
        st.serialize_field("missing_predictions", &self.missing_predictions)?;
        st.serialize_field("per_question", &self.per_question)?;
        st.end()
    }
}

impl EvalReport {
    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Scores `predictions` against `golds`. Missing predictions count as empty
/// answers and are listed in the report.
pub fn evaluate_run(
    predictions: &HashMap<String, String>,
    golds: &[GoldAnswerSet],
    retrieved: &HashMap<String, Vec<RetrievedPassage>>,
    mu: f64,
    k: usize,
) -> Result<EvalReport, EvalError> {
    let mut by_id: BTreeMap<&str, &GoldAnswerSet> = BTreeMap::new();
    for g in golds {
        if by_id.insert(&g.question_id, g).is_some() {
            return Err(EvalError::DuplicateQuestion(g.question_id.clone()));
        }
    }
    let mut missing = Vec::new();
    let mut per_question = Vec::with_capacity(by_id.len());
    for (id, gold) in &by_id {
        let prediction = match predictions.get(*id) {
            Some(p) => p.clone(),
            None => {
                missing.push(id.to_string());
                String::new()
            }
        };
        let passages = retrieved
            .get(*id)
            .ok_or_else(|| EvalError::MissingRetrieval(id.to_string()))?;
        per_question.push(QuestionScore {
            question_id: id.to_string(),
            em: exact_match(&prediction, gold),
            f1: token_f1(&prediction, gold),
            answer_found_in_retrieval: answer_in_passages(gold, passages),
            prediction,
        });
    }
    let found = per_question.iter().filter(|q| q.answer_found_in_retrieval).count();
    Ok(EvalReport {
        em: mean(per_question.iter().map(|q| q.em)),
        f1: mean(per_question.iter().map(|q| q.f1)),
        recall: if per_question.is_empty() {
            0.0
        } else {
            found as f64 / per_question.len() as f64
        },
        num_questions: per_question.len(),
        mu,
        k,
        missing_predictions: missing,
        per_question,
    })
}

/// Ids that appear more than once.
pub fn duplicate_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut dups: Vec<String> = ids
        .into_iter()
        .filter(|id| !seen.insert(*id))
        .map(str::to_string)
        .collect();
    dups.sort();
    dups.dedup();
    dups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::Paragraph;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn gold(id: &str, answers: &[&str], lang: Lang) -> GoldAnswerSet {
        GoldAnswerSet {
            question_id: id.into(),
            answers: answers.iter().map(|s| s.to_string()).collect(),
            lang,
        }
    }

    fn en(answers: &[&str]) -> GoldAnswerSet {
        gold("q", answers, Lang::En)
    }

    fn passages(texts: &[&str]) -> Vec<RetrievedPassage> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| RetrievedPassage {
                paragraph: Arc::new(Paragraph::new("d", i as u32, *t)),
                retriever_score: 1.0,
                rank: i as u32 + 1,
            })
            .collect()
    }

    #[test]
    fn em_examples() {
        assert_eq!(exact_match("The Cat", &en(&["cat"])), 1.0);
        assert_eq!(exact_match("cat", &en(&["cat"])), 1.0);
        assert_eq!(exact_match("cats", &en(&["cat"])), 0.0);
    }

    #[test]
    fn f1_examples() {
        assert!((token_f1("black cat", &en(&["cat"])) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(token_f1("cat", &en(&["cat"])), 1.0);
        assert_eq!(token_f1("dog", &en(&["cat"])), 0.0);
        assert_eq!(token_f1("", &en(&["cat"])), 0.0);
        assert_eq!(token_f1("the", &en(&["a"])), 1.0);
        assert_eq!(token_f1("cat cat dog", &en(&["cat dog dog"])), 2.0 / 3.0);
    }

    #[test]
    fn chinese_f1_is_per_character() {
        let g = gold("q", &["北京大学"], Lang::Zh);
        assert_eq!(exact_match("北京 大学。", &g), 1.0);
        // 2 shared characters: P = 2/2, R = 2/4.
        assert!((token_f1("北京", &g) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn recall_examples() {
        let mut texts = vec!["nothing here"; 10];
        texts[6] = "the answer is Paris";
        let mut retrieved = HashMap::new();
        retrieved.insert("q".to_string(), passages(&texts));
        assert_eq!(retrieval_recall(&[en(&["paris"])], &retrieved).unwrap(), 1.0);
        assert_eq!(retrieval_recall(&[en(&["berlin"])], &retrieved).unwrap(), 0.0);
        assert_eq!(
            retrieval_recall(&[gold("other", &["x"], Lang::En)], &retrieved),
            Err(EvalError::MissingRetrieval("other".into()))
        );
        assert_eq!(retrieval_recall(&[], &retrieved).unwrap(), 0.0);
    }

    #[test]
    fn run_report() {
        let golds = vec![gold("b", &["cat"], Lang::En), gold("a", &["dog"], Lang::En)];
        let mut preds = HashMap::new();
        preds.insert("b".to_string(), "a cat".to_string());
        preds.insert("a".to_string(), "bird".to_string());
        let mut retrieved = HashMap::new();
        retrieved.insert("a".to_string(), passages(&["a dog"]));
        retrieved.insert("b".to_string(), vec![]);
        let report = evaluate_run(&preds, &golds, &retrieved, 0.5, 10).unwrap();
        assert_eq!(report.em, 0.5);
        assert_eq!(report.recall, 0.5);
        assert_eq!(report.per_question[0].question_id, "a");
        assert!(report.missing_predictions.is_empty());

        preds.remove("a");
        let report = evaluate_run(&preds, &golds, &retrieved, 0.5, 10).unwrap();
        assert_eq!(report.missing_predictions, vec!["a"]);
        assert_eq!((report.per_question[0].em, report.per_question[0].f1), (0.0, 0.0));

        let dup = vec![golds[0].clone(), golds[0].clone()];
        assert!(matches!(
            evaluate_run(&preds, &dup, &retrieved, 0.5, 10),
            Err(EvalError::DuplicateQuestion(_))
        ));
    }

    #[test]
    fn report_json_shape() {
        let golds = vec![gold("a", &["dog"], Lang::En)];
        let preds = HashMap::from([("a".to_string(), "dog".to_string())]);
        let retrieved = HashMap::from([("a".to_string(), passages(&["dog"]))]);
        let json = evaluate_run(&preds, &golds, &retrieved, 1.0 / 3.0, 5).unwrap().to_json();
        assert!(json.contains("\"em\": 1.000000,"), "{json}");
        assert!(json.contains("\"mu\": 0.333333,"), "{json}");
        assert!(json.contains("\"k\": 5,"), "{json}");
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed["per_question"][0]["answer_found_in_retrieval"], true);
    }

    #[test]
    fn compensated_mean() {
        let values = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(mean(values), 0.5);
        assert_eq!(mean(std::iter::empty()), 0.0);
    }

    proptest! {
        #[test]
        fn em_never_exceeds_f1(pred in "[a-c ,.]{0,12}", answers in proptest::collection::vec("[a-c ,.]{0,12}", 1..4), zh in any::<bool>()) {
            let lang = if zh { Lang::Zh } else { Lang::En };
            let answers: Vec<&str> = answers.iter().map(String::as_str).collect();
            let g = gold("q", &answers, lang);
            let (em, f1) = (exact_match(&pred, &g), token_f1(&pred, &g));
            prop_assert!(0.0 <= em && em <= f1 && f1 <= 1.0, "em={em} f1={f1}");
        }

        #[test]
        fn f1_is_symmetric_for_single_gold(a in "[a-d ]{0,12}", b in "[a-d ]{0,12}") {
            prop_assert_eq!(token_f1(&a, &en(&[&b])), token_f1(&b, &en(&[&a])));
        }

        #[test]
        fn aggregates_ignore_question_order(
            rows in proptest::collection::vec(("[a-c]{1,3}", "[a-c]{1,3}"), 1..12),
            seed in any::<u64>(),
        ) {
            let golds: Vec<GoldAnswerSet> = rows.iter().enumerate()
                .map(|(i, (_, g))| gold(&format!("q{i}"), &[g.as_str()], Lang::En)).collect();
            let preds: HashMap<String, String> = rows.iter().enumerate()
                .map(|(i, (p, _))| (format!("q{i}"), p.clone())).collect();
            let retrieved: HashMap<String, Vec<RetrievedPassage>> = golds.iter()
                .map(|g| (g.question_id.clone(), passages(&["a b c"]))).collect();
            let mut shuffled = golds.clone();
            let len = shuffled.len();
            shuffled.rotate_left((seed as usize) % len);
            shuffled.reverse();
            let a = evaluate_run(&preds, &golds, &retrieved, 0.0, 1).unwrap();
            let b = evaluate_run(&preds, &shuffled, &retrieved, 0.0, 1).unwrap();
            prop_assert_eq!(a.to_json(), b.to_json());
            prop_assert!(a.em <= a.f1);
        }
    }
}
