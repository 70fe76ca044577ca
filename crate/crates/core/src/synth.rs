//! Deterministic synthetic corpora for end-to-end checks and benchmarks.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::corpus::{QueryRecord, RawDocument};

const SYLLABLES: [&str; 20] = [
    "ba", "ko", "ri", "mu", "te", "sa", "lo", "ne", "vi", "du", "pa", "ge", "zo", "fi", "ha", "ju", "ce", "wy", "xo",
    "qu",
];

/// Common words that glue sentences together; all are stopwords.
const GLUE: [&str; 12] = [
    "the", "of", "and", "a", "to", "in", "is", "was", "for", "on", "with", "as",
];

/// The `i`-th made-up word: two or more syllables, never a stopword.
pub fn word(i: usize) -> String {
    let mut n = i;
    let mut out = String::new();
    for _ in 0..2 {
        out.push_str(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
    }
    while n > 0 {
        out.push_str(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
    }
    out
}

/// Documents plus queries with explicit gold documents.
#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub docs: Vec<RawDocument>,
    pub queries: Vec<QueryRecord>,
}

fn filler(rng: &mut ChaCha8Rng, content_vocab: usize, len: usize) -> Vec<String> {
    (0..len)
        .map(|_| {
            if rng.gen_bool(0.4) {
                GLUE.choose(rng).unwrap().to_string()
            } else {
                word(rng.gen_range(0..content_vocab))
            }
        })
        .collect()
}

fn doc(i: usize, words: &[String]) -> RawDocument {
    let mut d = RawDocument::new(format!("doc {i}"), words.join(" "));
    d.id = Some(i as u64);
    d
}

/// Positions of every `n`-gram of words across all documents.
fn ngram_counts(docs: &[Vec<String>], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for d in docs {
        for w in d.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Every document carries one planted `clue_len`-word span that occurs
/// nowhere else in the corpus. Query `i` targets document `i` and carries
/// the clue as its `target`.
pub fn planted_clue_corpus(n_docs: usize, doc_len: usize, clue_len: usize, seed: u64) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = 400;
    let mut words: Vec<Vec<String>> = Vec::with_capacity(n_docs);
    let mut clue_at = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        let mut w = filler(&mut rng, vocab, doc_len.saturating_sub(clue_len));
        let at = rng.gen_range(0..=w.len());
        let clue: Vec<String> = (0..clue_len).map(|_| word(rng.gen_range(0..vocab))).collect();
        w.splice(at..at, clue);
        words.push(w);
        clue_at.push(at);
    }
    // redraw any clue that is not unique
    loop {
        let dupes: Vec<usize> = {
            let counts = ngram_counts(&words, clue_len);
            (0..n_docs)
                .filter(|&i| counts[&words[i][clue_at[i]..clue_at[i] + clue_len]] > 1)
                .collect()
        };
        if dupes.is_empty() {
            break;
        }
        for i in dupes {
            for j in 0..clue_len {
                words[i][clue_at[i] + j] = word(rng.gen_range(0..vocab));
            }
        }
    }
    let queries = (0..n_docs)
        .map(|i| {
            let clue = &words[i][clue_at[i]..clue_at[i] + clue_len];
            let mut q = QueryRecord::new(
                format!("q{i}"),
                format!("which passage mentions {}", clue[..2].join(" ")),
            );
            q.target = Some(clue.join(" "));
            q.gold_doc_ids = Some(vec![i as u32]);
            q
        })
        .collect();
    SynthCorpus {
        docs: words.iter().enumerate().map(|(i, w)| doc(i, w)).collect(),
        queries,
    }
}

/// Shape of a keyword retrieval corpus.
#[derive(Clone, Debug)]
pub struct KeywordCorpusSpec {
    pub n_docs: usize,
    /// Sentences per document, the opening one included.
    pub sentences: usize,
    pub sentence_len: usize,
    /// Length of the keyword phrase planted in each document.
    pub keywords: usize,
    pub content_vocab: usize,
    /// When set, opening sentences come from this many shared templates.
    pub shared_openings: Option<usize>,
    pub seed: u64,
}

impl Default for KeywordCorpusSpec {
    fn default() -> Self {
        Self {
            n_docs: 1000,
            sentences: 4,
            sentence_len: 10,
            keywords: 3,
            content_vocab: 300,
            shared_openings: None,
            seed: 0,
        }
    }
}

/// Each document plants a unique keyword phrase in a sentence after the
/// first; query `i` asks for document `i` by those keywords.
pub fn keyword_corpus(spec: &KeywordCorpusSpec) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sentence = |rng: &mut ChaCha8Rng| {
        let mut s = filler(rng, spec.content_vocab, spec.sentence_len);
        s.push(".".into());
        s
    };
    let openings: Vec<Vec<String>> = (0..spec.shared_openings.unwrap_or(0))
        .map(|_| sentence(&mut rng))
        .collect();
    let mut docs: Vec<Vec<String>> = Vec::with_capacity(spec.n_docs);
    let mut phrases: Vec<(usize, Vec<String>)> = Vec::with_capacity(spec.n_docs);
    for _ in 0..spec.n_docs {
        let mut w = match openings.choose(&mut rng) {
            Some(o) => o.clone(),
            None => sentence(&mut rng),
        };
        let host = rng.gen_range(1..spec.sentences.max(2));
        for s in 1..spec.sentences.max(2) {
            let mut body = sentence(&mut rng);
            if s == host {
                let at = rng.gen_range(1..body.len() - 1);
                let phrase: Vec<String> = (0..spec.keywords)
                    .map(|_| word(rng.gen_range(0..spec.content_vocab)))
                    .collect();
                phrases.push((w.len() + at, phrase.clone()));
                body.splice(at..at, phrase);
            }
            w.extend(body);
        }
        docs.push(w);
    }
    loop {
        let dupes: Vec<usize> = {
            let counts = ngram_counts(&docs, spec.keywords);
            (0..spec.n_docs)
                .filter(|&i| {
                    let (at, _) = &phrases[i];
                    counts[&docs[i][*at..at + spec.keywords]] > 1
                })
                .collect()
        };
        if dupes.is_empty() {
            break;
        }
        for i in dupes {
            let at = phrases[i].0;
            for j in 0..spec.keywords {
                let w = word(rng.gen_range(0..spec.content_vocab));
                docs[i][at + j] = w.clone();
                phrases[i].1[j] = w;
            }
        }
    }
    let queries = (0..spec.n_docs)
        .map(|i| {
            let mut q = QueryRecord::new(format!("q{i}"), format!("what about {}", phrases[i].1.join(" ")));
            q.gold_doc_ids = Some(vec![i as u32]);
            q
        })
        .collect();
    SynthCorpus {
        docs: docs.iter().enumerate().map(|(i, w)| doc(i, w)).collect(),
        queries,
    }
}

/// Documents over a Zipf-distributed vocabulary, for index and decoder
/// benchmarks at scale.
pub fn zipf_corpus(total_tokens: usize, n_docs: usize, vocab: usize, seed: u64) -> Vec<RawDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zipf = Zipf::new(vocab as u64, 1.05).expect("valid zipf parameters");
    let words: Vec<String> = (0..vocab).map(word).collect();
    let per_doc = (total_tokens / n_docs.max(1)).max(1);
    (0..n_docs)
        .map(|i| {
            let mut text = String::with_capacity(per_doc * 6);
            for j in 0..per_doc {
                if j > 0 {
                    text.push(' ');
                }
                text.push_str(&words[zipf.sample(&mut rng) as usize - 1]);
            }
            doc(i, &[text])
        })
        .collect()
}

/// Small random corpus over an alphabet of `alphabet` words.
pub fn random_corpus(rng: &mut impl Rng, max_docs: usize, max_len: usize, alphabet: usize) -> Vec<RawDocument> {
    let n = rng.gen_range(1..=max_docs);
    (0..n)
        .map(|i| {
            let len = rng.gen_range(1..=max_len);
            let w: Vec<String> = (0..len).map(|_| format!("t{}", rng.gen_range(0..alphabet))).collect();
            doc(i, &w)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Stopwords;

    #[test]
    fn words_are_distinct_and_not_stopwords() {
        let stop = Stopwords::english();
        let ws: Vec<String> = (0..2000).map(word).collect();
        let mut sorted = ws.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), ws.len());
        assert!(ws.iter().all(|w| !stop.contains(w)));
    }

    #[test]
    fn planted_clues_unique_and_deterministic() {
        let a = planted_clue_corpus(60, 30, 12, 3);
        let b = planted_clue_corpus(60, 30, 12, 3);
        assert_eq!(a.docs, b.docs);
        for (i, q) in a.queries.iter().enumerate() {
            let clue = q.target.as_ref().unwrap();
            let hits = a
                .docs
                .iter()
                .filter(|d| format!(" {} ", d.text).contains(&format!(" {clue} ")))
                .count();
            assert_eq!(hits, 1);
            assert!(a.docs[i].text.contains(clue.as_str()));
        }
    }

    #[test]
    fn keyword_phrases_live_past_the_opening() {
        let c = keyword_corpus(&KeywordCorpusSpec {
            n_docs: 50,
            shared_openings: Some(5),
            ..Default::default()
        });
        let openings: std::collections::HashSet<&str> =
            c.docs.iter().map(|d| d.text.split(" . ").next().unwrap()).collect();
        assert!(openings.len() <= 5);
        for (d, q) in c.docs.iter().zip(&c.queries) {
            let phrase = q.text.trim_start_matches("what about ");
            let first = d.text.split(" . ").next().unwrap();
            assert!(d.text.contains(phrase) && !first.contains(phrase));
        }
    }
}
