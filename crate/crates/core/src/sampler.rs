//! Supervised clue sampling: turn (query, positive document) pairs into
//! short training clues centred on the query's keywords.
//!
//! The document is split into sentences, the sentences with the most
//! keyword hits are kept, every window of `span_len` tokens in them is scored
//! `hits / (hits + rho)`, the scores go through a softmax, and `clues_per_doc`
//! start positions are drawn from that distribution. Each clue is the
//! `clue_len` tokens following its start.

use std::ops::Range;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, KnowledgeBase, Query, TokenId, Tokenizer, TokenizerMode};
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Smoothing factor in `hits / (hits + rho)`.
    pub rho: f64,
    pub span_len: usize,
    pub clues_per_doc: usize,
    pub clue_len: usize,
    /// Stream seed. Run configs do not set it; it is derived from the run's
    /// global seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            span_len: 12,
            clues_per_doc: 2,
            clue_len: 12,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    Config(&'static str),
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(self.rho > 0.0) {
            return Err(SamplerError::Config("rho must be positive"));
        }
        if self.span_len == 0 || self.clue_len == 0 || self.clues_per_doc == 0 {
            return Err(SamplerError::Config(
                "span_len, clue_len and clues_per_doc must be at least 1",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpanCandidate {
    pub sentence_index: usize,
    pub start: usize,
    pub hits: usize,
    pub score: f64,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SampledClue {
    pub start: usize,
    pub sentence_index: usize,
    pub tokens: Vec<TokenId>,
}

/// One emitted training pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TrainingClue {
    pub query_id: String,
    pub doc_id: u32,
    pub clue_tokens: Vec<TokenId>,
    pub clue_text: String,
    pub start: usize,
    pub sentence_index: usize,
}

/// Sentence ranges of a token sequence. Ranges are contiguous, disjoint and
/// cover the whole input; a sentence ends after a run of `.`, `!` or `?`
/// (byte mode additionally requires whitespace or the end of the text to
/// follow).
pub fn split_sentences(tokens: &[TokenId], tokenizer: &Tokenizer) -> Vec<Range<usize>> {
    let terminators = tokenizer.terminators();
    let is_term = |t: TokenId| terminators.contains(&t);
    let space = match tokenizer.mode() {
        TokenizerMode::Byte => tokenizer.tokenize(" ").first().copied(),
        TokenizerMode::Word => None,
    };
    let is_ws = |t: TokenId| match tokenizer.mode() {
        TokenizerMode::Byte => Some(t) == space || tokenizer.detokenize(&[t]).trim().is_empty(),
        TokenizerMode::Word => false,
    };
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..tokens.len() {
        if !is_term(tokens[i]) {
            continue;
        }
        let ends = match tokens.get(i + 1) {
            None => true,
            Some(&next) => match tokenizer.mode() {
                TokenizerMode::Word => !is_term(next),
                TokenizerMode::Byte => is_ws(next),
            },
        };
        if ends && i + 1 < tokens.len() {
            out.push(start..i + 1);
            start = i + 1;
        }
    }
    if start < tokens.len() || out.is_empty() {
        out.push(start..tokens.len());
    }
    out
}

/// Number of distinct keywords occurring contiguously inside `span`.
pub fn keyword_hits(span: &[TokenId], keywords: &[Vec<TokenId>]) -> usize {
    keywords
        .iter()
        .filter(|k| !k.is_empty() && k.len() <= span.len() && span.windows(k.len()).any(|w| w == k.as_slice()))
        .count()
}

pub fn span_score(hits: usize, rho: f64) -> f64 {
    let c = hits as f64;
    c / (c + rho)
}

/// Indices of the sentences with the most keyword hits (all of them on a tie).
pub fn select_sentences(tokens: &[TokenId], sentences: &[Range<usize>], keywords: &[Vec<TokenId>]) -> Vec<usize> {
    let hits: Vec<usize> = sentences
        .iter()
        .map(|r| keyword_hits(&tokens[r.clone()], keywords))
        .collect();
    let best = hits.iter().copied().max().unwrap_or(0);
    (0..sentences.len()).filter(|&i| hits[i] == best).collect()
}

/// Candidate spans over the given sentences with softmax-normalized scores.
pub fn span_distribution(
    tokens: &[TokenId],
    sentences: &[(usize, Range<usize>)],
    keywords: &[Vec<TokenId>],
    config: &SamplerConfig,
) -> Vec<SpanCandidate> {
    let mut cands = Vec::new();
    for (sentence_index, range) in sentences {
        let len = range.len();
        if len <= config.span_len {
            let hits = keyword_hits(&tokens[range.clone()], keywords);
            cands.push((*sentence_index, range.start, hits));
            continue;
        }
        for start in range.start..=range.end - config.span_len {
            let hits = keyword_hits(&tokens[start..start + config.span_len], keywords);
            cands.push((*sentence_index, start, hits));
        }
    }
    let scores: Vec<f64> = cands.iter().map(|c| span_score(c.2, config.rho)).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    cands
        .into_iter()
        .zip(scores)
        .zip(exps)
        .map(|(((sentence_index, start, hits), score), e)| SpanCandidate {
            sentence_index,
            start,
            hits,
            score,
            prob: e / z,
        })
        .collect()
}

/// Distribution over the top-hit sentences of `doc` for `query`.
pub fn doc_distribution(
    doc: &Document,
    query: &Query,
    tokenizer: &Tokenizer,
    config: &SamplerConfig,
) -> Vec<SpanCandidate> {
    let sentences = split_sentences(&doc.tokens, tokenizer);
    let selected: Vec<(usize, Range<usize>)> = select_sentences(&doc.tokens, &sentences, &query.keywords)
        .into_iter()
        .map(|i| (i, sentences[i].clone()))
        .collect();
    span_distribution(&doc.tokens, &selected, &query.keywords, config)
}

/// Draws `clues_per_doc` starts (with replacement) and cuts `clue_len`
/// tokens from each, truncated at the end of the document.
pub fn sample_clues(
    doc: &Document,
    query: &Query,
    tokenizer: &Tokenizer,
    config: &SamplerConfig,
    rng: &mut impl rand::Rng,
) -> Vec<SampledClue> {
    let cands = doc_distribution(doc, query, tokenizer, config);
    let dist = WeightedIndex::new(cands.iter().map(|c| c.prob)).expect("softmax weights are positive");
    (0..config.clues_per_doc)
        .map(|_| {
            let c = &cands[dist.sample(rng)];
            let end = (c.start + config.clue_len).min(doc.tokens.len());
            SampledClue {
                start: c.start,
                sentence_index: c.sentence_index,
                tokens: doc.tokens[c.start..end].to_vec(),
            }
        })
        .collect()
}

/// Training pairs for every query's gold documents. Each (query, document)
/// pair gets its own RNG stream derived from `config.seed`, so the output
/// does not depend on iteration order or parallelism.
pub fn sample_training_pairs(
    kb: &KnowledgeBase,
    queries: &[Query],
    config: &SamplerConfig,
) -> Result<Vec<TrainingClue>, SamplerError> {
    config.validate()?;
    let mut out = Vec::new();
    for (qi, query) in queries.iter().enumerate() {
        for &doc_id in query.gold_doc_ids.as_deref().unwrap_or(&[]) {
            let Some(doc) = kb.doc(doc_id) else { continue };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[qi as u64, doc_id as u64]));
            for clue in sample_clues(doc, query, kb.tokenizer(), config, &mut rng) {
                out.push(TrainingClue {
                    query_id: query.id.clone(),
                    doc_id,
                    clue_text: kb.tokenizer().detokenize(&clue.tokens),
                    clue_tokens: clue.tokens,
                    start: clue.start,
                    sentence_index: clue.sentence_index,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RawDocument, TokenizerConfig};

    fn kb(texts: &[&str]) -> KnowledgeBase {
        KnowledgeBase::ingest(
            texts.iter().map(|t| RawDocument::new("", *t)).collect::<Vec<_>>(),
            TokenizerConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn two_sentences() {
        let kb = kb(&["the cat sat . it slept ."]);
        let doc = &kb.docs()[0];
        let s = split_sentences(&doc.tokens, kb.tokenizer());
        assert_eq!(s, vec![0..4, 4..7]);
    }

    #[test]
    fn punctuation_free_is_one_sentence() {
        let kb = kb(&["no punctuation here"]);
        assert_eq!(split_sentences(&kb.docs()[0].tokens, kb.tokenizer()), vec![0..3]);
    }

    #[test]
    fn sentences_cover_document() {
        let kb = kb(&["a b . . c ! d ? e"]);
        let doc = &kb.docs()[0];
        let s = split_sentences(&doc.tokens, kb.tokenizer());
        let joined: Vec<TokenId> = s.iter().flat_map(|r| doc.tokens[r.clone()].iter().copied()).collect();
        assert_eq!(joined, doc.tokens);
        assert_eq!(s.len(), 4);
    }

    #[test]
    fn byte_mode_requires_whitespace_after_terminator() {
        let kb = KnowledgeBase::ingest(
            vec![RawDocument::new("", "pi is 3.14 ok. next one.")],
            TokenizerConfig {
                mode: TokenizerMode::Byte,
                lowercase: true,
            },
        )
        .unwrap();
        let doc = &kb.docs()[0];
        let s = split_sentences(&doc.tokens, kb.tokenizer());
        let texts: Vec<String> = s
            .iter()
            .map(|r| kb.tokenizer().detokenize(&doc.tokens[r.clone()]))
            .collect();
        assert_eq!(texts, vec!["pi is 3.14 ok.", " next one."]);
    }

    #[test]
    fn hits_are_distinct_keywords() {
        let kb = kb(&["the cat sat cat cat dog"]);
        let t = |s: &str| kb.tokenizer().tokenize(s);
        let cat_sat = vec![t("cat"), t("sat")];
        assert_eq!(keyword_hits(&t("the cat sat"), &cat_sat), 2);
        assert_eq!(keyword_hits(&t("dog"), &cat_sat), 0);
        assert_eq!(keyword_hits(&t("cat cat cat"), &[t("cat")]), 1);
    }

    #[test]
    fn score_formula() {
        assert_eq!(span_score(1, 1.0), 0.5);
        assert_eq!(span_score(0, 1.0), 0.0);
        assert!(span_score(1000, 1.0) < 1.0);
        assert!(span_score(3, 1.0) > span_score(2, 1.0));
    }

    #[test]
    fn softmax_of_two_spans() {
        // "a b c d" has windows "a b c d"[0..4] and [1..5] of "a b c d e".
        // Keywords {"c d", "d e", "e"}: first window 1 hit (pi 0.5), second 3 hits (pi 0.75).
        let kb = kb(&["a b c d e"]);
        let t = |s: &str| kb.tokenizer().tokenize(s);
        let keywords = vec![t("c d"), t("d e"), t("e")];
        let cfg = SamplerConfig {
            span_len: 4,
            rho: 1.0,
            ..Default::default()
        };
        let cands = span_distribution(&kb.docs()[0].tokens, &[(0, 0..5)], &keywords, &cfg);
        assert_eq!(cands.iter().map(|c| c.hits).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(cands[0].score, 0.5);
        assert_eq!(cands[1].score, 0.75);
        // 40-digit reference values of e^0.5 / (e^0.5 + e^0.75) and its complement
        assert!((cands[0].prob - 0.437_823_499_114_201_9).abs() < 1e-12);
        assert!((cands[1].prob - 0.562_176_500_885_798_1).abs() < 1e-12);
    }

    #[test]
    fn zero_hits_give_uniform() {
        let kb = kb(&["a b c d e f"]);
        let cfg = SamplerConfig {
            span_len: 2,
            ..Default::default()
        };
        let cands = span_distribution(&kb.docs()[0].tokens, &[(0, 0..6)], &[], &cfg);
        assert_eq!(cands.len(), 5);
        assert!(cands.iter().all(|c| (c.prob - 0.2).abs() < 1e-12));
    }

    #[test]
    fn short_sentence_is_one_candidate() {
        let kb = kb(&["a b c"]);
        let cfg = SamplerConfig {
            span_len: 12,
            ..Default::default()
        };
        let cands = span_distribution(&kb.docs()[0].tokens, &[(0, 0..3)], &[], &cfg);
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].prob, 1.0);
    }

    #[test]
    fn single_candidate_repeats_start() {
        let kb = kb(&["red fox . a b c d e f g h i j k l m n o p q r s t u v"]);
        let q = Query::from_text("q", "red fox", &kb).unwrap();
        let cfg = SamplerConfig {
            span_len: 12,
            clue_len: 4,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let clues = sample_clues(&kb.docs()[0], &q, kb.tokenizer(), &cfg, &mut rng);
        assert_eq!(clues.len(), 2);
        assert!(clues.iter().all(|c| c.start == 0 && c.sentence_index == 0));
        assert_eq!(kb.tokenizer().detokenize(&clues[0].tokens), "red fox . a");
    }

    #[test]
    fn tied_sentences_are_pooled() {
        let kb = kb(&["cat a . b c . cat d ."]);
        let q = Query::from_text("q", "cat", &kb).unwrap();
        let cfg = SamplerConfig {
            span_len: 2,
            ..Default::default()
        };
        let cands = doc_distribution(&kb.docs()[0], &q, kb.tokenizer(), &cfg);
        let sentences: Vec<usize> = cands.iter().map(|c| c.sentence_index).collect();
        assert_eq!(sentences, vec![0, 0, 2, 2]);
    }

    #[test]
    fn clue_truncated_at_document_end() {
        let kb = kb(&["a b c d"]);
        let q = Query::from_text("q", "d", &kb).unwrap();
        let cfg = SamplerConfig {
            span_len: 1,
            clue_len: 3,
            clues_per_doc: 20,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for c in sample_clues(&kb.docs()[0], &q, kb.tokenizer(), &cfg, &mut rng) {
            assert_eq!(c.tokens.len(), (4 - c.start).min(3));
        }
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let kb = kb(&["the quick brown fox jumps over the lazy dog . the end ."]);
        let mut rec = crate::corpus::QueryRecord::new("q", "quick fox");
        rec.gold_doc_ids = Some(vec![0]);
        let q = Query::new(rec, &kb, &Default::default(), None).unwrap();
        let cfg = SamplerConfig {
            span_len: 3,
            clue_len: 3,
            ..Default::default()
        };
        let a = sample_training_pairs(&kb, std::slice::from_ref(&q), &cfg).unwrap();
        let b = sample_training_pairs(&kb, std::slice::from_ref(&q), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn config_validation() {
        let bad = SamplerConfig {
            rho: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SamplerConfig {
            clue_len: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
