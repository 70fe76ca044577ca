mod common;

use std::collections::BTreeSet;

use clue_core::corpus::{KnowledgeBase, Query, RawDocument};
use clue_core::decoder::{
    batch_retrieve, constrained_sequence_score, decode, renormalized_step, DecodeConfig, Strategy as GenStrategy,
};
use clue_core::fm_index::{ClueIndex, Distinct};
use clue_core::scorer::{logsumexp, NGramConfig, NGramScorer, OracleScorer};
use clue_core::synth;
use common::{NaiveScanner, RandomScorer};
use proptest::prelude::*;

fn corpus() -> impl Strategy<Value = Vec<Vec<u8>>> {
    (2u8..=8).prop_flat_map(|alphabet| prop::collection::vec(prop::collection::vec(0..alphabet, 1..=40), 1..=8))
}

fn build(docs: &[Vec<u8>]) -> (KnowledgeBase, ClueIndex) {
    common::kb_and_index(
        docs.iter()
            .map(|d| RawDocument::new("", d.iter().map(|k| format!("t{k}")).collect::<Vec<_>>().join(" ")))
            .collect(),
    )
}

fn config() -> impl Strategy<Value = DecodeConfig> {
    (
        prop::sample::select(vec![(1usize, 1usize), (2, 1), (4, 2), (6, 3), (8, 4)]),
        1usize..6,
        0usize..5,
        prop::sample::select(GenStrategy::ALL.to_vec()),
        0.0f64..2.0,
        0.0f64..2.0,
    )
        .prop_map(
            |((num_beams, num_groups), min_len, extra, strategy, lp, dp)| DecodeConfig {
                num_beams,
                num_groups,
                min_len,
                max_len: min_len + extra,
                length_penalty: lp,
                diversity_penalty: dp,
                strategy,
                // the first real token id stands in for sentence-final punctuation
                terminators: vec![2],
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// Every ranked clue occurs in the corpus and identifies only the
    /// document it is ranked for; documents are distinct and scores non-increasing.
    #[test]
    fn emitted_clues_are_sound(docs in corpus(), cfg in config(), seed in any::<u64>(), temp in 0.1f64..8.0) {
        let (kb, index) = build(&docs);
        let scan = NaiveScanner::new(&kb, 1);
        let scorer = RandomScorer { vocab: kb.vocab_size(), seed, temperature: temp };
        let q = Query::from_text("q", "t0 t1", &kb).unwrap();
        let res = decode(&q, &index, &scorer, &cfg).unwrap();
        let mut seen = BTreeSet::new();
        for r in &res.ranked {
            prop_assert!(!r.clue.is_empty());
            prop_assert!(scan.count(&r.clue) > 0);
            let docs = scan.resolve(cfg.strategy, &r.clue, &cfg.terminators);
            prop_assert_eq!(docs.into_iter().collect::<Vec<_>>(), vec![r.doc_id], "clue {:?}", r.clue);
            prop_assert!(seen.insert(r.doc_id));
            prop_assert!(r.score.is_finite());
            if cfg.strategy == GenStrategy::KnowledgeClue {
                prop_assert!(r.clue.len() <= cfg.max_len);
            }
        }
        for w in res.ranked.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
    }

    #[test]
    fn decoding_is_deterministic_and_batch_is_order_stable(docs in corpus(), cfg in config(), seed in any::<u64>()) {
        let (kb, index) = build(&docs);
        let scorer = RandomScorer { vocab: kb.vocab_size(), seed, temperature: 3.0 };
        let queries: Vec<Query> = (0..6)
            .map(|i| Query::from_text(format!("q{i}"), &format!("t{} t{}", i % 3, i % 2), &kb).unwrap())
            .collect();
        let batch = batch_retrieve(&queries, &index, &scorer, &cfg);
        for (q, b) in queries.iter().zip(&batch) {
            let single = decode(q, &index, &scorer, &cfg).unwrap();
            let b = b.as_ref().unwrap();
            prop_assert_eq!(&b.query_id, &q.id);
            prop_assert_eq!(&b.ranked, &single.ranked);
        }
    }

    /// Renormalized step scores form a distribution over the allowed set.
    #[test]
    fn masked_step_is_a_distribution(docs in corpus(), seed in any::<u64>(), ctx_len in 0usize..4) {
        let (kb, index) = build(&docs);
        let scorer = RandomScorer { vocab: kb.vocab_size(), seed, temperature: 5.0 };
        let q = Query::from_text("q", "t0", &kb).unwrap();
        let d0 = &kb.docs()[0].tokens;
        let ctx = &d0[..ctx_len.min(d0.len() - 1)];
        let next = index.get_next(index.interval_of(ctx)).unwrap();
        let allowed: Vec<_> = next.iter().map(|(t, _)| *t).collect();
        let step = renormalized_step(&scorer, &q, ctx, &allowed).unwrap();
        prop_assert!(logsumexp(&step).abs() < 1e-9);
    }
}

/// With no length penalty the ranked score is the constrained sequence score.
#[test]
fn ranked_score_is_constrained_sequence_score() {
    let c = synth::keyword_corpus(&synth::KeywordCorpusSpec {
        n_docs: 40,
        ..Default::default()
    });
    let (kb, index) = common::kb_and_index(c.docs);
    let scorer = NGramScorer::train(&kb, NGramConfig::default()).unwrap();
    let cfg = DecodeConfig {
        length_penalty: 0.0,
        num_beams: 8,
        num_groups: 2,
        min_len: 3,
        max_len: 6,
        ..Default::default()
    };
    for rec in c.queries.iter().take(5) {
        let q = Query::new(rec.clone(), &kb, &clue_core::corpus::Stopwords::english(), None).unwrap();
        let res = decode(&q, &index, &scorer, &cfg).unwrap();
        assert!(!res.ranked.is_empty());
        for r in &res.ranked {
            let s = constrained_sequence_score(&scorer, &index, &q, &r.clue).unwrap();
            assert!((s - r.score).abs() < 1e-9, "{s} vs {}", r.score);
        }
    }
}

/// Two documents equal except at position 5: only clues covering that
/// position can resolve, and common prefixes are dropped once they reach
/// the length limit.
#[test]
fn near_duplicate_documents() {
    let base: Vec<String> = (0..12).map(synth::word).collect();
    let mut a = base.clone();
    let mut b = base.clone();
    a[5] = synth::word(100);
    b[5] = synth::word(101);
    let (kb, index) = common::kb_and_index(vec![
        RawDocument::new("", a.join(" ")),
        RawDocument::new("", b.join(" ")),
    ]);
    let scan = NaiveScanner::new(&kb, 12);
    let x = kb.tokenizer().token_id(&a[5]).unwrap();
    let y = kb.tokenizer().token_id(&b[5]).unwrap();
    let q = Query::from_text("q", &base[0], &kb).unwrap();

    let mut dropped = 0;
    let mut finalized = 0;
    for seed in 0..200 {
        for (beams, groups, max_len) in [(4, 2, 3), (6, 3, 5), (2, 1, 12)] {
            let scorer = RandomScorer {
                vocab: kb.vocab_size(),
                seed,
                temperature: 4.0,
            };
            let cfg = DecodeConfig {
                num_beams: beams,
                num_groups: groups,
                min_len: 1,
                max_len,
                ..Default::default()
            };
            let res = decode(&q, &index, &scorer, &cfg).unwrap();
            dropped += res.diagnostics.dropped_ambiguous;
            finalized += res.diagnostics.finalized;
            for r in &res.ranked {
                assert!(r.clue.contains(&x) || r.clue.contains(&y), "{:?}", r.clue);
                assert_eq!(scan.distinct(&r.clue), Distinct::Unique(r.doc_id));
            }
        }
    }
    assert!(finalized > 0);
    assert!(dropped > 0, "all-common beams should be dropped at the length limit");
}

/// The oracle scorer walks straight to each planted clue.
#[test]
fn oracle_recovers_planted_clues() {
    let c = synth::planted_clue_corpus(100, 40, 12, 5);
    let (kb, index) = common::kb_and_index(c.docs);
    let scorer = OracleScorer::per_query(kb.vocab_size());
    let cfg = DecodeConfig {
        min_len: 12,
        max_len: 12,
        ..Default::default()
    };
    for rec in &c.queries {
        let q = Query::new(rec.clone(), &kb, &clue_core::corpus::Stopwords::english(), None).unwrap();
        let res = decode(&q, &index, &scorer, &cfg).unwrap();
        let top = &res.ranked[0];
        assert_eq!(Some(vec![top.doc_id]), rec.gold_doc_ids);
        assert_eq!(Some(&top.clue), q.target.as_ref());
    }
}
