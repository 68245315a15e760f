mod common;

use common::*;
use odqa::index::{Index, IndexConfig, Paragraph};
use odqa::text::AnalyzerKind;
use proptest::prelude::*;

fn hits(index: &Index, query: &str, k: usize) -> Vec<(String, u32, f64)> {
    index
        .search(query, k)
        .into_iter()
        .map(|h| (h.paragraph.doc_id.clone(), h.paragraph.para_id, h.retriever_score))
        .collect()
}

#[test]
fn statistics_match_brute_force_counts() {
    let paragraphs = random_paragraphs(7, 20);
    let index = Index::build(paragraphs.clone(), IndexConfig::default()).unwrap();
    let docs: Vec<Vec<String>> = paragraphs.iter().map(|p| oracle_terms(&p.text)).collect();
    assert_eq!(index.num_paragraphs(), 20);
    assert_eq!(index.total_tokens(), docs.iter().map(Vec::len).sum::<usize>() as u64);
    let mut vocab: Vec<&String> = docs.iter().flatten().collect();
    vocab.sort();
    vocab.dedup();
    assert_eq!(index.num_terms(), vocab.len());
    for term in vocab {
        let df = docs.iter().filter(|d| d.contains(term)).count();
        assert_eq!(index.doc_freq(term), df, "{term}");
        for posting in index.postings(term) {
            let tf = docs[posting.paragraph as usize].iter().filter(|w| *w == term).count();
            assert_eq!(posting.tf as usize, tf);
        }
    }
    for (i, d) in docs.iter().enumerate() {
        assert_eq!(index.length(i as u32), Some(d.len() as u32));
    }
}

#[test]
fn toy_counts() {
    let ps = ["a", "b", "a"].iter().enumerate().map(|(i, t)| Paragraph::new("d", i as u32, *t));
    let index = Index::build(ps, IndexConfig::default()).unwrap();
    assert_eq!((index.num_paragraphs(), index.doc_freq("a"), index.doc_freq("b")), (3, 2, 1));
    let empty = Index::build(Vec::new(), IndexConfig::default()).unwrap();
    assert_eq!(empty.num_paragraphs(), 0);
    assert!(empty.search("a", 10).is_empty());
}

#[test]
fn persisted_index_replays_bit_exactly() {
    let paragraphs = random_paragraphs(11, 20);
    let index = Index::build(paragraphs, IndexConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    index.persist(dir.path()).unwrap();
    let reopened = Index::open(dir.path()).unwrap();
    assert_eq!(reopened.config(), index.config());
    for query in random_queries(11, 10) {
        let a = hits(&index, &query, 7);
        let b = hits(&reopened, &query, 7);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((&x.0, x.1), (&y.0, y.1));
            assert_eq!(x.2.to_bits(), y.2.to_bits());
        }
    }
}

#[test]
fn cjk_index_finds_bigrams() {
    let ps = vec![
        Paragraph::new("a", 0, "北京大学位于北京。"),
        Paragraph::new("b", 0, "上海是一座城市。"),
    ];
    let index = Index::build(ps, IndexConfig::with_analyzer(AnalyzerKind::CjkBigram)).unwrap();
    let got = index.search("北京在哪里", 10);
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].paragraph.doc_id, "a");
    assert!(index.search("纽约", 10).is_empty());
}

fn corpus_strategy() -> impl Strategy<Value = Vec<Paragraph>> {
    prop::collection::vec(prop::collection::vec(0usize..8, 1..12), 1..25).prop_map(|docs| {
        docs.into_iter()
            .enumerate()
            .map(|(i, words)| {
                let text: Vec<String> = words.iter().map(|w| format!("w{w}")).collect();
                Paragraph::new(format!("d{}", i % 4), (i / 4) as u32, text.join(" "))
            })
            .collect()
    })
}

fn query_strategy() -> impl Strategy<Value = String> {
    prop::collection::vec(0usize..10, 1..5)
        .prop_map(|ws| ws.iter().map(|w| format!("W{w}")).collect::<Vec<_>>().join(" "))
}

proptest! {
    #[test]
    fn search_equals_brute_force(ps in corpus_strategy(), q in query_strategy(), k1 in 0.1f64..3.0, b in 0.0f64..=1.0) {
        let config = IndexConfig { k1, b, ..IndexConfig::default() };
        let index = Index::build(ps.clone(), config).unwrap();
        let expected = oracle_bm25(&ps, &q, k1, b);
        let got = hits(&index, &q, ps.len());
        prop_assert_eq!(got.len(), expected.len());
        for (g, e) in got.iter().zip(&expected) {
            prop_assert!(rel_err(g.2, e.2) <= 1e-9);
        }
        // Rank order must agree except inside groups of equal scores.
        let mut ge: Vec<_> = got.iter().map(|g| (g.0.clone(), g.1)).collect();
        let mut ee: Vec<_> = expected.iter().map(|e| (e.0.clone(), e.1)).collect();
        ge.sort();
        ee.sort();
        prop_assert_eq!(ge, ee);
        prop_assert!(got.windows(2).all(|w| w[0].2 >= w[1].2));
    }

    #[test]
    fn results_are_prefixes(ps in corpus_strategy(), q in query_strategy(), k in 1usize..10, extra in 1usize..10) {
        let index = Index::build(ps, IndexConfig::default()).unwrap();
        let short = index.search(&q, k);
        let long = index.search(&q, k + extra);
        prop_assert!(short.len() <= long.len());
        prop_assert_eq!(&long[..short.len()], &short[..]);
        for (i, h) in long.iter().enumerate() {
            prop_assert_eq!(h.rank as usize, i + 1);
        }
    }

    #[test]
    fn partitioning_is_unobservable(ps in corpus_strategy(), size in 1usize..9) {
        let a = Index::build_partitioned(ps.clone(), IndexConfig::default(), size).unwrap();
        let b = Index::build_partitioned(ps, IndexConfig::default(), 1 << 20).unwrap();
        let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        a.persist(da.path()).unwrap();
        b.persist(db.path()).unwrap();
        for f in ["meta.json", "paragraphs.jsonl", "postings.bin"] {
            prop_assert_eq!(std::fs::read(da.path().join(f)).unwrap(), std::fs::read(db.path().join(f)).unwrap());
        }
    }

    #[test]
    fn extra_occurrence_never_lowers_score(ps in corpus_strategy(), target in 0usize..25, w in 0usize..8) {
        // df and avglen are held fixed in the oracle by scoring the edited
        // paragraph against the original collection statistics.
        let target = target % ps.len();
        let term = format!("w{w}");
        let docs: Vec<Vec<String>> = ps.iter().map(|p| oracle_terms(&p.text)).collect();
        let n = docs.len() as f64;
        let avglen = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
        let df = docs.iter().filter(|d| d.contains(&term)).count().max(1) as f64;
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        let score = |tf: f64, len: f64| idf * tf * 1.9 / (tf + 0.9 * (1.0 - 0.4 + 0.4 * len / avglen));
        let tf = docs[target].iter().filter(|t| **t == term).count() as f64;
        let len = docs[target].len() as f64;
        prop_assert!(score(tf + 1.0, len + 1.0) >= score(tf, len));
    }
}
